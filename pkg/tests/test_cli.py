import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from slowbond.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, config_hash, main

REPO = Path(__file__).resolve().parents[1]


def write_cfg(tmp_path, data, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data, sort_keys=False))
    return p


def run(*argv):
    return main([str(a) for a in argv])


def small_campaign(beta, replicas=40, extra=None):
    data = {
        "seed": 5,
        "regime": {"beta": beta, "alpha": 1.0},
        "battery": [
            {"id": "odd", "tag": "hermite_gauss", "poly": [0.2, 1.0], "a": 4.0},
            {"id": "gauss", "tag": "hermite_gauss", "poly": [1.0]},
        ],
        "lattice": {"n": 4, "L": 12, "rho": 0.5, "T": 0.1, "sample_step": 0.025, "replicas": replicas},
        "simulate": {"laplacian": True, "exponential": {"function": "gauss", "S": 0.1, "times": [0.0, 0.05, 0.1]}},
    }
    data.update(extra or {})
    return data


# ---------------------------------------------------------------------------
# validate


def test_validate_bad_neumann_battery(tmp_path, capsys):
    code = run("validate", "--config", REPO / "configs/neumann_bad_battery.yaml", "--out", tmp_path)
    assert code == EXIT_FAIL
    report = json.loads((tmp_path / "validate.json").read_text())
    assert not report["pass"] and report["failures"][0]["function_id"] == "x_gauss"
    assert "FAIL membership x_gauss" in capsys.readouterr().out


def test_validate_quick_line_suites_pass(tmp_path):
    cfg = write_cfg(tmp_path, {
        "seed": 3,
        "regime": {"kind": "line"},
        "battery": [{"id": "g", "tag": "hermite_gauss", "poly": [1.0]}],
        "validate": {"suites": ["membership", "laplacian", "semigroup"], "times": [0.1], "max_k": 1},
    })
    assert run("validate", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK
    text = (tmp_path / "o" / "validate.csv").read_text().splitlines()
    assert text[0].startswith("# config_hash=") and text[1] == "# seed=3"


def test_validate_empty_battery(tmp_path, capsys):
    cfg = tmp_path / "empty.yaml"
    cfg.write_text("seed: 1\nregime:\n  kind: line\nbattery: []\n")
    assert run("validate", "--config", cfg, "--out", tmp_path / "o") == EXIT_USAGE
    assert "empty.yaml:4: battery is empty" in capsys.readouterr().err


def test_unknown_key_reports_line(tmp_path, capsys):
    cfg = tmp_path / "typo.yaml"
    cfg.write_text("seed: 1\nregime:\n  kind: line\nlatice:\n  n: 2\n")
    assert run("validate", "--config", cfg, "--out", tmp_path / "o") == EXIT_USAGE
    err = capsys.readouterr().err
    assert "typo.yaml:4" in err and "latice" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["validate"],
        ["validate", "--config", "nope.yaml"],
        ["frobnicate"],
        ["validate", "--config", "x.yaml", "--seed", "-3"],
        ["validate", "--config", "x.yaml", "--beta", "fast"],
    ],
)
def test_usage_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == EXIT_USAGE


def test_regime_flag_conflict(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"seed": 1, "battery": "default", "validate": {"suites": ["membership"]}})
    assert run("validate", "--config", cfg, "--out", tmp_path / "o", "--regime", "line", "--beta", "2") == EXIT_USAGE


def test_evolve_writes_samples(tmp_path):
    cfg = write_cfg(tmp_path, {
        "seed": 2,
        "regime": {"kind": "robin", "alpha": 1.0},
        "battery": [{"id": "g", "tag": "hermite_gauss", "poly": [1.0, 1.0]}],
        "evolve": {"times": [0.1], "orders": [0, 1], "grid": {"start": -1.0, "stop": 1.0, "num": 5}},
    })
    assert run("evolve", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK
    lines = [l for l in (tmp_path / "o" / "evolve.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(lines) == 1 + 2 * (5 + 2)


# ---------------------------------------------------------------------------
# simulate and compare


def test_simulate_rerun_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, small_campaign(0.5))
    assert run("simulate", "--config", cfg, "--out", tmp_path / "a") == EXIT_OK
    assert run("simulate", "--config", cfg, "--out", tmp_path / "b", "--workers", "2") == EXIT_OK
    a = (tmp_path / "a" / "samples.csv").read_bytes()
    assert a == (tmp_path / "b" / "samples.csv").read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 5 and man["files"] == ["samples.csv"]
    assert a.startswith(f"# config_hash={man['config_hash']}\n# seed=5\n".encode())
    assert {"lap:odd", "T:gauss@0.05"} <= set(man["config"]["functions"])
    assert "wall_time_s" in man and "code_version" in man


def test_seed_flag_changes_samples_and_hash(tmp_path):
    cfg = write_cfg(tmp_path, small_campaign(0.5, replicas=5))
    run("simulate", "--config", cfg, "--out", tmp_path / "a")
    run("simulate", "--config", cfg, "--out", tmp_path / "b", "--seed", "6")
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["config_hash"] != mb["config_hash"] and mb["seed"] == 6
    assert (tmp_path / "a" / "samples.csv").read_bytes() != (tmp_path / "b" / "samples.csv").read_bytes()


def test_simulate_zero_replicas_manifest_only(tmp_path):
    cfg = write_cfg(tmp_path, small_campaign(0.5, replicas=0))
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK
    assert sorted(p.name for p in (tmp_path / "o").iterdir()) == ["manifest.json"]


def test_simulate_rejects_small_window(tmp_path, capsys):
    data = small_campaign(0.5)
    data["lattice"]["L"] = 5
    assert run("simulate", "--config", write_cfg(tmp_path, data), "--out", tmp_path / "o") == EXIT_USAGE
    assert "below 3n" in capsys.readouterr().err


def test_workers_env(tmp_path, monkeypatch):
    monkeypatch.setenv("SLOWBOND_WORKERS", "zero")
    cfg = write_cfg(tmp_path, small_campaign(0.5, replicas=2))
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == EXIT_USAGE
    monkeypatch.setenv("SLOWBOND_WORKERS", "2")
    assert run("simulate", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["workers"] == 2


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    for name, beta in (("b05", 0.5), ("b1", 1.0), ("b2", 2.0)):
        cfg = write_cfg(base, small_campaign(beta, replicas=300), f"{name}.yaml")
        assert run("simulate", "--config", cfg, "--out", base / name) == EXIT_OK
    return base


def compare_cfg(base, inputs, **extra):
    data = {"seed": 5, "compare": {"inputs": inputs, "function": "odd", "times": [0.0, 0.05, 0.1], **extra}}
    return write_cfg(base, data, "compare.yaml")


def test_compare_three_regimes(runs, tmp_path):
    cfg = compare_cfg(runs, ["b05", "b1", "b2"],
                      dynkin={"input": "b05", "function": "gauss", "times": [0.05, 0.1], "variance": False},
                      exponential={"input": "b05", "function": "gauss", "S": 0.1, "times": [0.05, 0.1]})
    code = run("compare", "--config", cfg, "--out", tmp_path)
    assert code in (EXIT_OK, EXIT_FAIL)
    for f in ("phase_table.csv", "plot.csv", "summary.csv", "martingales.csv", "compare.json"):
        assert (tmp_path / f).exists(), f
    report = json.loads((tmp_path / "compare.json").read_text())
    assert report["separation"]["status"] in ("separated", "inconclusive")
    header = [l for l in (tmp_path / "plot.csv").read_text().splitlines() if not l.startswith("#")][0]
    assert header == "regime,t,oracle,empirical,ci_low,ci_high"
    assert code == (EXIT_OK if report["pass"] else EXIT_FAIL)


def test_compare_single_regime(runs, tmp_path):
    assert run("compare", "--config", compare_cfg(runs, ["b05"]), "--out", tmp_path) in (EXIT_OK, EXIT_FAIL)
    report = json.loads((tmp_path / "compare.json").read_text())
    assert report["separation"]["status"] == "single" and report["separation"]["best"] is None


def test_compare_missing_inputs(runs, tmp_path, capsys):
    assert run("compare", "--config", compare_cfg(runs, ["b05", "gone"]), "--out", tmp_path) == EXIT_USAGE
    assert "gone" in capsys.readouterr().err


def test_compare_tampered_file(runs, tmp_path, capsys):
    bad = runs / "tampered"
    shutil.copytree(runs / "b05", bad)
    lines = (bad / "samples.csv").read_text().splitlines(keepends=True)
    lines[9] = lines[9].rstrip("\n") + ",extra\n"
    (bad / "samples.csv").write_text("".join(lines))
    assert run("compare", "--config", compare_cfg(runs, ["tampered"]), "--out", tmp_path) == EXIT_USAGE
    assert "row 10" in capsys.readouterr().err


def test_report_aggregates(runs, tmp_path):
    run("compare", "--config", compare_cfg(runs, ["b05"]), "--out", tmp_path)
    code = run("report", "--out", tmp_path)
    assert code in (EXIT_OK, EXIT_FAIL)
    assert (tmp_path / "report.txt").exists()
    assert run("report", "--out", tmp_path / "absent") == EXIT_USAGE


def test_config_hash_is_canonical():
    assert config_hash({"a": 1, "b": [1.0, 2]}) == config_hash({"b": [1.0, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_console_script_help():
    exe = shutil.which("slowbond")
    cmd = [exe] if exe else [sys.executable, "-m", "slowbond.cli"]
    out = subprocess.run(cmd + ["--help"], capture_output=True, text=True, check=True).stdout
    for name in ("validate", "evolve", "simulate", "compare", "report"):
        assert name in out
