"""Command-line entry point: ``slowbond {validate,evolve,simulate,compare,report}``.

Every command reads one YAML config (see ``configs/`` in the repository),
writes its artifacts into ``--out`` and stamps each of them with the config
hash and seed. Exit status is 0 when every executed check passes, 1 when a
check fails and 2 for usage, configuration or input errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import yaml

from . import semigroups as sg
from . import simulator as sim
from . import stats
from .testfn import (
    BetaRegime,
    FamilyError,
    default_battery,
    from_record,
    laplace_beta,
    validate_membership,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
WORKERS_ENV = "SLOWBOND_WORKERS"


class UsageError(Exception):
    """Bad flags, config or inputs; mapped to exit status 2."""


# ---------------------------------------------------------------------------
# config loading


_NUM = (int, float)
_LIST = list
SCHEMA = {
    "seed": int,
    "workers": int,
    "regime": {"kind": str, "beta": _NUM + (str,), "alpha": _NUM},
    "battery": (str, list),
    "lattice": {
        "n": int,
        "L": int,
        "rho": _NUM,
        "T": _NUM,
        "sample_times": _LIST,
        "sample_step": _NUM,
        "replicas": int,
    },
    "simulate": {
        "laplacian": bool,
        "exponential": {"function": str, "S": _NUM, "times": _LIST},
    },
    "validate": {
        "suites": _LIST,
        "times": _LIST,
        "max_k": int,
        "tol": _NUM,
        "eps": _LIST,
        "generator_times": _LIST,
        "continuity_t": _NUM,
        "continuity_h": _NUM,
        "gradnorm_horizon": _NUM,
        "gradnorm_dt": _NUM,
    },
    "evolve": {
        "times": _LIST,
        "orders": _LIST,
        "grid": {"start": _NUM, "stop": _NUM, "num": int},
    },
    "compare": {
        "inputs": _LIST,
        "function": str,
        "times": _LIST,
        "level": _NUM,
        "threshold": _NUM,
        "atom": bool,
        "dynkin": {"input": str, "function": str, "times": _LIST, "variance": bool},
        "exponential": {"input": str, "function": str, "S": _NUM, "times": _LIST},
    },
}

VALIDATE_SUITES = ("membership", "laplacian", "semigroup", "generator", "continuity", "gradnorm")


def _line_map(node, path=(), out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = path + (k.value,)
            out[key] = k.start_mark.line + 1
            _line_map(v, key, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out[path + (i,)] = v.start_mark.line + 1
            _line_map(v, path + (i,), out)
    return out


class Config:
    """Parsed config with the source line of every key, for diagnostics."""

    def __init__(self, data, lines, path):
        self.data = data
        self.lines = lines
        self.path = path

    def where(self, *key):
        line = self.lines.get(tuple(key))
        return f"{self.path}:{line}" if line else str(self.path)

    def fail(self, key, message):
        raise UsageError(f"{self.where(*key)}: {message}")

    def section(self, name):
        return self.data.get(name) or {}


def _check_schema(cfg, data, schema, path=()):
    if not isinstance(data, dict):
        cfg.fail(path, f"section {'.'.join(map(str, path)) or '<root>'} must be a mapping")
    for key, value in data.items():
        where = path + (key,)
        if key not in schema:
            cfg.fail(where, f"unknown key {'.'.join(map(str, where))!r}")
        expected = schema[key]
        if isinstance(expected, dict):
            _check_schema(cfg, value, expected, where)
            continue
        types = expected if isinstance(expected, tuple) else (expected,)
        ok = isinstance(value, types) and not (isinstance(value, bool) and bool not in types)
        if not ok:
            names = "/".join(t.__name__ for t in types)
            cfg.fail(where, f"{'.'.join(map(str, where))} must be {names}, got {value!r}")


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise UsageError(f"{path}: malformed config: {exc}") from None
    data = {} if data is None else data
    cfg = Config(data, _line_map(node) if node is not None else {}, path)
    _check_schema(cfg, data, SCHEMA)
    return cfg


def _parse_beta(cfg, value):
    if isinstance(value, str):
        if value.strip().lower() not in ("inf", "infinity"):
            cfg.fail(("regime", "beta"), f"beta must be a number or 'inf', got {value!r}")
        return math.inf
    return value


def resolve_regime(cfg, args):
    """Regime from the config, with ``--regime/--beta/--alpha`` taking precedence.

    A ``--regime`` flag alone discards a config beta from another regime.
    """
    sec = cfg.section("regime")
    kind, beta = sec.get("kind"), _parse_beta(cfg, sec.get("beta"))
    alpha = args.alpha if args.alpha is not None else sec.get("alpha", 1.0)
    if args.beta is not None:
        kind, beta = args.regime, args.beta
    elif args.regime is not None:
        kind = args.regime
        if beta is not None and BetaRegime(float(beta)).kind != kind:
            beta = None
    if kind is None and beta is None:
        cfg.fail(("regime",), "a regime kind or beta is required")
    try:
        return BetaRegime.parse(kind, beta, alpha)
    except ValueError as exc:
        cfg.fail(("regime",), str(exc))


def resolve_battery(cfg, regime):
    raw = cfg.data.get("battery", "default")
    if isinstance(raw, str):
        if raw != "default":
            cfg.fail(("battery",), f"battery must be 'default' or a list, got {raw!r}")
        return default_battery(regime)
    if not raw:
        cfg.fail(("battery",), "battery is empty")
    out = {}
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict) or "id" not in entry or "tag" not in entry:
            cfg.fail(("battery", i), "battery entries need 'id' and 'tag'")
        rec = dict(entry)
        fid = str(rec.pop("id"))
        if "," in fid or fid in out:
            cfg.fail(("battery", i), f"function id {fid!r} is duplicated or contains a comma")
        try:
            out[fid] = from_record(rec)
        except (FamilyError, KeyError, TypeError, ValueError) as exc:
            cfg.fail(("battery", i), f"cannot build battery entry {fid!r}: {exc}")
    return out


def resolve_seed(cfg, args):
    seed = args.seed if args.seed is not None else cfg.data.get("seed", 0)
    if not (0 <= int(seed) < 2**64):
        raise UsageError("seed must be an unsigned 64-bit integer")
    return int(seed)


def resolve_workers(cfg, args):
    if args.workers is not None:
        w = args.workers
    elif WORKERS_ENV in os.environ:
        try:
            w = int(os.environ[WORKERS_ENV])
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer") from None
    else:
        w = cfg.data.get("workers", 1)
    if w < 1:
        raise UsageError("worker count must be >= 1")
    return w


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(resolved):
    return hashlib.sha256(_canonical(resolved).encode()).hexdigest()


def code_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _stamp(chash, seed):
    return [f"config_hash={chash}", f"seed={seed}"]


def _prepare_out(args):
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _write_json(path, obj):
    try:
        Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, default=str) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from None


def _floats(cfg, key, values):
    try:
        return [float(v) for v in values]
    except (TypeError, ValueError):
        cfg.fail(key, f"{'.'.join(key)} must be a list of numbers")


# ---------------------------------------------------------------------------
# commands


def cmd_validate(cfg, args):
    regime = resolve_regime(cfg, args)
    battery = resolve_battery(cfg, regime)
    seed = resolve_seed(cfg, args)
    sec = cfg.section("validate")
    suites = sec.get("suites", list(VALIDATE_SUITES))
    for i, name in enumerate(suites):
        if name not in VALIDATE_SUITES:
            cfg.fail(("validate", "suites", i), f"unknown suite {name!r}; choose from {', '.join(VALIDATE_SUITES)}")
    times = _floats(cfg, ("validate", "times"), sec.get("times", [0.01, 0.1, 1.0]))
    eps = _floats(cfg, ("validate", "eps"), sec.get("eps", [1e-2, 5e-3, 2.5e-3]))
    gen_times = _floats(cfg, ("validate", "generator_times"), sec.get("generator_times", [0.0, 0.1, 1.0]))
    max_k = sec.get("max_k", 2)
    tol = float(sec.get("tol", 1e-6))
    ct, ch = float(sec.get("continuity_t", 0.1)), float(sec.get("continuity_h", 0.02))
    gh, gdt = float(sec.get("gradnorm_horizon", 1.0)), float(sec.get("gradnorm_dt", 0.05))
    resolved = {
        "command": "validate",
        "regime": regime.to_record(),
        "battery": {k: H.to_record() for k, H in battery.items()},
        "validate": {"suites": suites, "times": times, "eps": eps, "generator_times": gen_times, "max_k": max_k,
                     "tol": tol, "continuity": [ct, ch], "gradnorm": [gh, gdt]},
        "seed": seed,
    }
    chash = config_hash(resolved)
    out = _prepare_out(args)

    rows = []

    def add(suite, fid, detail, value, target, passed):
        rows.append({"suite": suite, "function_id": fid, "regime": regime.kind, "detail": detail,
                     "value": float(value), "target": target, "pass": bool(passed)})

    for fid, H in battery.items():
        if "membership" in suites:
            for e in validate_membership(H, regime, max_k, tol).entries:
                add("membership", fid, f"{e.check}:order={e.order}", e.residual, f"<={tol}", e.passed)
        if "laplacian" in suites:
            for e in validate_membership(laplace_beta(H), regime, max_k, tol).entries:
                add("laplacian", fid, f"{e.check}:order={e.order}", e.residual, f"<={tol}", e.passed)
        if "semigroup" in suites:
            for t in times:
                rep = validate_membership(sg.evolve(regime, t, H), regime, max_k, tol)
                for e in rep.entries:
                    add("semigroup", fid, f"t={t}:{e.check}:order={e.order}", e.residual, f"<={tol}", e.passed)
        if "generator" in suites:
            for t in gen_times:
                _, order = sg.generator_order(regime, t, eps, H)
                add("generator", fid, f"t={t}", order, "[0.9,1.1]", 0.9 <= order <= 1.1)
        if "continuity" in suites:
            ratio = sg.continuity_ratio(regime, H, ct, ch)
            add("continuity", fid, f"t={ct}:h={ch}", ratio, "[1.5,2.5]", 1.5 <= ratio <= 2.5)
        if "gradnorm" in suites:
            ratio = sg.gradnorm_jump_ratio(regime, H, gh, gdt)
            add("gradnorm", fid, f"horizon={gh}:dt={gdt}", ratio, "[1.5,2.5]", 1.5 <= ratio <= 2.5)

    stats.write_records(rows, out / "validate.csv", _stamp(chash, seed))
    passed = all(r["pass"] for r in rows)
    _write_json(out / "validate.json", {"config": resolved, "config_hash": chash, "seed": seed, "pass": passed,
                                        "failures": [r for r in rows if not r["pass"]]})
    for r in rows:
        if not r["pass"]:
            print(f"FAIL {r['suite']} {r['function_id']} {r['detail']}: {r['value']:.3g} (target {r['target']})")
    print(f"validate: {sum(r['pass'] for r in rows)}/{len(rows)} checks passed")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_evolve(cfg, args):
    regime = resolve_regime(cfg, args)
    battery = resolve_battery(cfg, regime)
    seed = resolve_seed(cfg, args)
    sec = cfg.section("evolve")
    times = _floats(cfg, ("evolve", "times"), sec.get("times", [0.1]))
    orders = [int(k) for k in sec.get("orders", [0])]
    g = sec.get("grid", {})
    grid = np.linspace(float(g.get("start", -3.0)), float(g.get("stop", 3.0)), int(g.get("num", 61)))
    resolved = {"command": "evolve", "regime": regime.to_record(),
                "battery": {k: H.to_record() for k, H in battery.items()},
                "evolve": {"times": times, "orders": orders, "grid": grid.tolist()}, "seed": seed}
    chash = config_hash(resolved)
    out = _prepare_out(args)
    rows = []
    for fid, H in battery.items():
        for t in times:
            for k in orders:
                sampled = sg.semigroup_apply(regime, t, H, grid, k)
                for r in sampled.to_records():
                    rows.append({"function_id": fid, "t": t, **r})
    stats.write_records(rows, out / "evolve.csv", _stamp(chash, seed))
    print(f"evolve: wrote {len(rows)} values to {out / 'evolve.csv'}")
    return EXIT_OK


def _lattice(cfg, regime, seed):
    sec = cfg.section("lattice")
    for key in ("n", "L", "T", "replicas"):
        if key not in sec:
            cfg.fail(("lattice",), f"lattice.{key} is required")
    T = float(sec["T"])
    if "sample_times" in sec:
        times = _floats(cfg, ("lattice", "sample_times"), sec["sample_times"])
    else:
        step = float(sec.get("sample_step", T))
        if step <= 0:
            cfg.fail(("lattice", "sample_step"), "sample_step must be positive")
        m = int(round(T / step))
        if not math.isclose(m * step, T, rel_tol=1e-9):
            cfg.fail(("lattice", "sample_step"), "T must be a multiple of sample_step")
        times = [round(i * step, 12) for i in range(m + 1)]
    try:
        config = sim.LatticeConfig(
            n=sec["n"], L=sec["L"], beta=regime.beta, alpha=regime.alpha, rho=float(sec.get("rho", 0.5)),
            T=T, sample_times=times, seed=seed,
        )
    except sim.ConfigError as exc:
        cfg.fail(("lattice",), str(exc))
    if sec["replicas"] < 0:
        cfg.fail(("lattice", "replicas"), "replicas must be >= 0")
    return config, int(sec["replicas"])


def campaign_functions(cfg, regime, battery):
    """Battery plus the derived fields requested in the ``simulate`` section."""
    sec = cfg.section("simulate")
    funcs = dict(battery)
    records = {k: H.to_record() for k, H in battery.items()}
    if sec.get("laplacian", False):
        for fid, H in battery.items():
            funcs[f"lap:{fid}"] = laplace_beta(H)
            records[f"lap:{fid}"] = funcs[f"lap:{fid}"].to_record()
    ex = sec.get("exponential")
    if ex:
        fid = ex.get("function")
        if fid not in battery:
            cfg.fail(("simulate", "exponential", "function"), f"unknown function {fid!r}")
        S = float(ex["S"])
        times = _floats(cfg, ("simulate", "exponential", "times"), ex["times"])
        extra = stats.exponential_battery(regime, battery[fid], S, times, prefix=f"T:{fid}")
        funcs.update(extra)
        records.update({k: v.to_record() for k, v in extra.items()})
    return funcs, records


def cmd_simulate(cfg, args):
    regime = resolve_regime(cfg, args)
    battery = resolve_battery(cfg, regime)
    seed = resolve_seed(cfg, args)
    workers = resolve_workers(cfg, args)
    config, replicas = _lattice(cfg, regime, seed)
    funcs, records = campaign_functions(cfg, regime, battery)
    resolved = {"command": "simulate", "regime": regime.to_record(), "lattice": config.to_record(),
                "replicas": replicas, "functions": records, "seed": seed}
    chash = config_hash(resolved)
    out = _prepare_out(args)
    start = time.perf_counter()
    files = []
    if replicas > 0:
        samples = sim.simulate(config, funcs, replicas, workers)
        path = out / "samples.csv"
        try:
            samples.to_csv(path, _stamp(chash, seed))
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from None
        files.append("samples.csv")
    manifest = {
        "config": resolved,
        "config_hash": chash,
        "seed": seed,
        "code_version": code_version(),
        "workers": workers,
        "wall_time_s": round(time.perf_counter() - start, 3),
        "files": files,
    }
    _write_json(out / "manifest.json", manifest)
    print(f"simulate: {replicas} replicas of {len(funcs)} fields written to {out}")
    return EXIT_OK


def _load_run(base, entry):
    run = Path(entry)
    if not run.is_absolute():
        run = base / run
    return run


def _read_run(run):
    manifest = json.loads((run / "manifest.json").read_text())
    conf = manifest["config"]
    reg = conf["regime"]
    beta = math.inf if reg["beta"] == "inf" else float(reg["beta"])
    regime = BetaRegime(beta, float(reg["alpha"]))
    params = stats.OUParams(float(conf["lattice"]["rho"]), regime)
    samples = sim.read_samples_csv(run / "samples.csv")
    return manifest, regime, params, samples


def cmd_compare(cfg, args):
    seed = resolve_seed(cfg, args)
    sec = cfg.section("compare")
    if not sec.get("inputs"):
        cfg.fail(("compare",), "compare.inputs must list at least one simulate output directory")
    base = cfg.path.parent
    runs = [_load_run(base, e) for e in sec["inputs"]]
    extra = []
    for key in ("dynkin", "exponential"):
        if sec.get(key) and "input" in sec[key]:
            extra.append(_load_run(base, sec[key]["input"]))
    missing = [str(r / f) for r in dict.fromkeys(runs + extra) for f in ("manifest.json", "samples.csv")
               if not (r / f).exists()]
    if missing:
        raise UsageError("missing inputs: " + ", ".join(missing))
    fid = sec.get("function")
    if fid is None:
        cfg.fail(("compare",), "compare.function is required")
    times = _floats(cfg, ("compare", "times"), sec.get("times", [0.0]))
    level = float(sec.get("level", 3.0))
    threshold = float(sec.get("threshold", 5.0))
    loaded = {}
    campaigns = {}
    H = None
    for run in runs:
        manifest, regime, params, samples = _read_run(run)
        funcs = manifest["config"]["functions"]
        if fid not in funcs:
            raise UsageError(f"{run}: no function {fid!r} in campaign")
        H = from_record(funcs[fid])
        label = f"{regime.kind}(beta={regime.to_record()['beta']})"
        campaigns[label] = (samples, params)
        loaded[str(run)] = manifest["config_hash"]
    resolved = {"command": "compare", "inputs": loaded, "compare": sec, "seed": seed}
    chash = config_hash(resolved)
    out = _prepare_out(args)
    stamp = _stamp(chash, seed)

    try:
        report = stats.phase_transition_report(campaigns, fid, H, times, level=level, threshold=threshold,
                                              atom=bool(sec.get("atom", False)))
    except stats.DataError as exc:
        raise UsageError(str(exc)) from None
    summary = report.summary()
    plot = [{"regime": r["regime"], "t": r["t"], "oracle": r["oracle"], "empirical": r["empirical"],
             "ci_low": r["empirical"] - level * r["std_error"], "ci_high": r["empirical"] + level * r["std_error"]}
            for r in report.rows]
    stats.write_records(report.rows, out / "phase_table.csv", stamp)
    stats.write_records(plot, out / "plot.csv", stamp)

    martingale_rows = []
    if sec.get("dynkin"):
        d = sec["dynkin"]
        run = _load_run(base, d["input"]) if "input" in d else runs[0]
        manifest, regime, params, samples = _read_run(run)
        Hd = from_record(manifest["config"]["functions"][d["function"]])
        try:
            rep = stats.dynkin_martingale_test(samples, d["function"], f"lap:{d['function']}", Hd,
                                               _floats(cfg, ("compare", "dynkin", "times"), d["times"]), params,
                                               level=level, check_variance=d.get("variance", True))
        except (stats.DataError, stats.ResolutionError) as exc:
            raise UsageError(f"dynkin: {exc}") from None
        summary += rep.records
        martingale_rows += rep.rows
    if sec.get("exponential"):
        e = sec["exponential"]
        run = _load_run(base, e["input"]) if "input" in e else runs[0]
        manifest, regime, params, samples = _read_run(run)
        He = from_record(manifest["config"]["functions"][e["function"]])
        try:
            rep = stats.exponential_martingale_test(samples, He, float(e["S"]),
                                                    _floats(cfg, ("compare", "exponential", "times"), e["times"]),
                                                    params, prefix=f"T:{e['function']}", level=level)
        except stats.DataError as exc:
            raise UsageError(f"exponential: {exc}") from None
        summary += rep.records
        martingale_rows += rep.rows
    stats.write_records(summary, out / "summary.csv", stamp)
    if martingale_rows:
        stats.write_records(martingale_rows, out / "martingales.csv", stamp)
    passed = all(r.passed for r in summary)
    _write_json(out / "compare.json", {
        "config_hash": chash, "seed": seed, "inputs": loaded, "pass": passed,
        "separation": {"status": report.status, "best": report.separation, "at_t": report.separation_time,
                       "threshold": threshold},
    })
    for r in summary:
        if not r.passed:
            print(f"FAIL {r.test} {r.labels}: z={r.z:.2f}")
    print(f"compare: {sum(r.passed for r in summary)}/{len(summary)} checks passed; separation {report.status}"
          + (f" ({report.separation:.2f} SE at t={report.separation_time})" if report.separation is not None else ""))
    return EXIT_OK if passed else EXIT_FAIL


def _read_stamped_csv(path):
    import csv

    stamp, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                stamp[k] = v
            else:
                lines.append(line)
    return stamp, list(csv.DictReader(lines))


def cmd_report(cfg, args):
    out = Path(args.out)
    if not out.is_dir():
        raise UsageError(f"no such output directory: {out}")
    rows = []
    for name in ("validate.csv", "summary.csv"):
        path = out / name
        if path.exists():
            stamp, recs = _read_stamped_csv(path)
            for r in recs:
                rows.append((name, r, stamp))
    if not rows:
        raise UsageError(f"{out} holds no validate.csv or summary.csv")
    lines = []
    stamps = sorted({(s.get("config_hash", "?"), s.get("seed", "?")) for _, _, s in rows})
    for chash, seed in stamps:
        lines.append(f"# config_hash={chash} seed={seed}")
    failed = [(n, r) for n, r, _ in rows if r.get("pass") != "True"]
    by_file = {}
    for n, r, _ in rows:
        ok, total = by_file.get(n, (0, 0))
        by_file[n] = (ok + (r.get("pass") == "True"), total + 1)
    for n, (ok, total) in by_file.items():
        lines.append(f"{n}: {ok}/{total} passed")
    for n, r in failed:
        lines.append(f"FAIL {n}: " + ", ".join(f"{k}={v}" for k, v in r.items()))
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if not failed else EXIT_FAIL


HELP = {
    "validate": "run the S_beta property suites on a battery",
    "evolve": "sample T_t H and its derivatives on a grid",
    "simulate": "run an exclusion-process campaign and write field samples",
    "compare": "confront samples with the covariance and martingale oracles",
    "report": "summarise the pass/fail records found in --out",
}

COMMANDS = {
    "validate": cmd_validate,
    "evolve": cmd_evolve,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "report": cmd_report,
}


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _beta(text):
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML campaign config")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    common.add_argument("--seed", type=_u64, help="override the config seed")
    common.add_argument("--workers", type=int, help=f"worker processes (default: ${WORKERS_ENV} or 1)")
    common.add_argument("--regime", choices=("line", "robin", "neumann"), help="override the regime kind")
    common.add_argument("--beta", type=_beta, help="override beta (number or inf)")
    common.add_argument("--alpha", type=float, help="override the Robin coupling alpha")
    parser = _Parser(prog="slowbond", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command != "report" and args.config is None:
            raise UsageError("--config is required")
        cfg = load_config(args.config) if args.config is not None else Config({}, {}, Path("."))
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"slowbond: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except sim.SampleFormatError as exc:
        print(f"slowbond: parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"slowbond: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
