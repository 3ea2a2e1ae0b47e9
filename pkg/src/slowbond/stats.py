"""Monte Carlo estimators and Ornstein-Uhlenbeck oracles for field samples.

The stationary limit field satisfies ``dY = Delta_beta Y dt + sqrt(2 chi) grad dW``
with ``chi = rho (1 - rho)``. Two consequences are used as oracles:

* ``E[Y_t(H) Y_0(G)] = chi <T_t H, G>``;
* the Dynkin martingale ``M_t(H) = Y_t(H) - Y_0(H) - int_0^t Y_s(Delta H) ds``
  has ``E[M_t(H)^2] = 2 chi t ||grad H||^2``.

Both are checked exactly on small lattices (:func:`lattice_covariance_oracle`,
:func:`lattice_dynkin_variance`) before being used as large-``n`` targets.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.linalg import expm

from .kernels import DEFAULT_QUADRATURE, integrate
from .semigroups import evolve, gradnorm, l2_pairing
from .simulator import bond_rates, lattice_values
from .testfn import ROBIN, BetaRegime

__all__ = [
    "DataError",
    "ResolutionError",
    "CovEstimate",
    "OUParams",
    "SummaryRecord",
    "jackknife_mean",
    "jackknife_variance",
    "ou_covariance_oracle",
    "oracle_curve",
    "empirical_covariance",
    "lattice_covariance_oracle",
    "lattice_dynkin_variance",
    "dynkin_martingale_test",
    "exponential_battery",
    "exponential_martingale_test",
    "phase_transition_report",
    "write_records",
]


class DataError(ValueError):
    """Samples are missing the times or functions a test needs."""


class ResolutionError(ValueError):
    """Sample grid too coarse for the time integral in a martingale test."""


@dataclass(frozen=True)
class CovEstimate:
    """Replica mean with its jackknife standard error."""

    mean: float
    variance: float
    std_error: float
    replicas: int

    def __post_init__(self):
        if self.replicas < 2:
            raise DataError("an estimate needs at least 2 replicas")

    @classmethod
    def from_values(cls, x):
        x = np.asarray(x, dtype=float)
        if x.size >= 2 and np.all(x == x[0]):
            # exact for degenerate streams; summation round-off would leave ~1e-33
            return cls(float(x[0]), 0.0, 0.0, x.size)
        mean, se = jackknife_mean(x)
        return cls(float(mean), float(np.var(x, ddof=1)) if x.size > 1 else 0.0, se, x.size)

    def z(self, target):
        if self.std_error == 0:
            return 0.0 if self.mean == target else math.copysign(math.inf, self.mean - target)
        return (self.mean - target) / self.std_error


def _jackknife_se(loo):
    m = loo.size
    return float(math.sqrt((m - 1) / m * np.sum((loo - loo.mean()) ** 2)))


def jackknife_mean(x):
    """Mean and jackknife standard error (equals ``sd / sqrt(m)``)."""
    x = np.asarray(x, dtype=float)
    m = x.size
    if m < 2:
        raise DataError("jackknife needs at least 2 values")
    s = x.sum()
    loo = (s - x) / (m - 1)
    return float(s / m), _jackknife_se(loo)


def jackknife_variance(x):
    """Sample variance (ddof=1) and its jackknife standard error."""
    x = np.asarray(x, dtype=float)
    m = x.size
    if m < 3:
        raise DataError("variance jackknife needs at least 3 values")
    s, s2 = x.sum(), np.sum(x * x)
    ls, ls2 = s - x, s2 - x * x
    loo = (ls2 - ls * ls / (m - 1)) / (m - 2)
    return float(np.var(x, ddof=1)), _jackknife_se(loo)


@dataclass(frozen=True)
class OUParams:
    """Density and regime of the limiting field.

    ``qv_coefficient`` multiplies the deterministic exponent of the
    exponential martingale; the stationary field with noise ``sqrt(2 chi)``
    needs ``chi`` here.
    """

    rho: float
    regime: BetaRegime
    qv_coefficient: float | None = None

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise ValueError(f"rho must lie in (0, 1), got {self.rho!r}")

    @property
    def chi(self):
        return self.rho * (1.0 - self.rho)

    @property
    def exponent_coefficient(self):
        return self.chi if self.qv_coefficient is None else float(self.qv_coefficient)


@dataclass(frozen=True)
class SummaryRecord:
    test: str
    statistic: float
    target: float
    std_error: float
    z: float
    passed: bool
    labels: dict = field(default_factory=dict)

    def to_record(self):
        rec = {"test": self.test, **self.labels}
        rec.update(
            statistic=self.statistic,
            target=self.target,
            std_error=self.std_error,
            z=self.z,
            **{"pass": bool(self.passed)},
        )
        return rec


def _record(test, est, target, level, **labels):
    z = est.z(target)
    return SummaryRecord(test, est.mean, float(target), est.std_error, float(z), bool(abs(z) <= level), labels)


def ou_covariance_oracle(params, H, G, t, *, atom=False, cfg=DEFAULT_QUADRATURE):
    """``chi <T_t H, G>``; ``atom`` adds ``alpha**-2 (T_t H)(0+) G(0+)`` at ``beta = 1``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    F = evolve(params.regime, t, H, cfg)
    val = l2_pairing(F, G, cfg)
    if atom and params.regime.kind == ROBIN:
        val += float(F.eval(0.0)) * float(G.eval(0.0)) / params.regime.alpha**2
    return params.chi * val


def oracle_curve(params, H, G, times, *, atom=False, cfg=DEFAULT_QUADRATURE):
    return np.array([ou_covariance_oracle(params, H, G, t, atom=atom, cfg=cfg) for t in times])


def _series(samples, fid):
    if fid not in samples.function_ids:
        raise DataError(f"no samples for function {fid!r}")
    return samples.series(fid)


def _at(samples, t):
    try:
        return samples.time_index(t)
    except KeyError:
        raise DataError(f"no samples at t={t}") from None


def empirical_covariance(samples, h_id, g_id, t):
    """Replica average of ``Y_t(H) Y_0(G)`` with a jackknife standard error."""
    if samples.replicas < 2:
        raise DataError("need at least 2 replicas")
    yh = _series(samples, h_id)[:, _at(samples, t)]
    yg = _series(samples, g_id)[:, _at(samples, 0.0)]
    return CovEstimate.from_values(yh * yg)


def _walk_generator(config):
    rates = bond_rates(config)
    A = np.zeros((config.n_sites, config.n_sites))
    idx = np.arange(rates.size)
    A[idx, idx + 1] = rates
    A[idx + 1, idx] = rates
    A[np.diag_indices_from(A)] = -A.sum(axis=1)
    return A


def lattice_covariance_oracle(config, H, G, t):
    """Exact ``E[Y_t(H) Y_0(G)]`` on the finite lattice.

    The centered two-point function of the exclusion process is ``chi`` times
    the transition kernel of one walker with the same bond rates.
    """
    h = lattice_values(H, config)
    g = lattice_values(G, config)
    P = expm(t * _walk_generator(config)) if t > 0 else np.eye(config.n_sites)
    return config.chi * float(h @ P @ g) / config.n


def lattice_dynkin_variance(config, H, t):
    """Exact ``E[M_t(H)^2]`` on the lattice: ``2 chi t / n * sum_b r_b (dh_b)^2``."""
    h = lattice_values(H, config)
    return 2.0 * config.chi * t * float(np.sum(bond_rates(config) * np.diff(h) ** 2)) / config.n


def _trapezoid(y, s):
    return np.sum(0.5 * (y[:, 1:] + y[:, :-1]) * np.diff(s), axis=1)


@dataclass
class MartingaleReport:
    records: list
    passed: bool
    rows: list = field(default_factory=list)

    def to_records(self):
        return [r.to_record() for r in self.records]


def dynkin_martingale_test(samples, h_id, lap_id, H, times, params, *, level=3.0, check_variance=True,
                           cfg=DEFAULT_QUADRATURE):
    """Mean and variance of ``M_t(H)`` at each of ``times``.

    The time integral is a trapezoid sum on the sample grid; halving the grid
    gives a Richardson error estimate per replica. If its RMS exceeds half
    the drift confidence half-width the grid is declared too coarse.

    Parameters
    ----------
    samples : FieldSamples
        Must contain ``h_id`` (for ``H``) and ``lap_id`` (for ``Delta_beta H``).
    H : TestFunction
        Used for the variance target ``2 chi t ||grad_beta H||^2_{2,beta}``.
    """
    yh = _series(samples, h_id)
    yl = _series(samples, lap_id)
    s = samples.times
    i0 = _at(samples, 0.0)
    qv_rate = 2.0 * params.chi * gradnorm(params.regime, 0.0, H, cfg)
    records, rows = [], []
    for t in times:
        it = _at(samples, t)
        if t == 0:
            records.append(_record("dynkin_mean", CovEstimate(0.0, 0.0, 0.0, max(samples.replicas, 2)), 0.0, level, t=0.0))
            continue
        seg = slice(i0, it + 1)
        fine = _trapezoid(yl[:, seg], s[seg])
        npts = it + 1 - i0
        if npts < 3 or (npts - 1) % 2:
            raise ResolutionError(f"need an even number (>= 2) of grid intervals on [0, {t}]")
        coarse = _trapezoid(yl[:, seg][:, ::2], s[seg][::2])
        m = yh[:, it] - yh[:, i0] - fine
        drift = CovEstimate.from_values(m)
        err_rms = float(np.sqrt(np.mean(((fine - coarse) / 3.0) ** 2)))
        if err_rms > 0.5 * level * drift.std_error:
            raise ResolutionError(
                f"integral error estimate {err_rms:.3g} exceeds half the confidence half-width at t={t}"
            )
        records.append(_record("dynkin_mean", drift, 0.0, level, t=float(t)))
        var, var_se = jackknife_variance(m)
        target = qv_rate * t
        if check_variance:
            est = CovEstimate(var, var, var_se, m.size)
            records.append(_record("dynkin_variance", est, target, level, t=float(t)))
        rows.append({"t": float(t), "mean": drift.mean, "mean_se": drift.std_error, "variance": var,
                     "variance_se": var_se, "variance_target": target, "integral_error": err_rms})
    return MartingaleReport(records, all(r.passed for r in records), rows)


def exponential_battery(regime, H, S, times, prefix="TSH", cfg=DEFAULT_QUADRATURE):
    """Test functions ``T_{S-t} H`` keyed ``f"{prefix}@{t}"`` for sampling."""
    return {f"{prefix}@{t!r}": evolve(regime, S - t, H, cfg) for t in times}


def exponent_integrals(params, H, S, times, cfg=DEFAULT_QUADRATURE):
    """``int_0^t ||grad_beta T_{S-r} H||^2 dr`` for each sorted ``t``."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or times.min() < 0 or times.max() > S:
        raise ValueError("times must be sorted within [0, S]")

    def g(r):
        return np.array([gradnorm(params.regime, S - ri, H, cfg) for ri in np.ravel(r)])

    out, acc, prev = [], 0.0, 0.0
    for t in times:
        if t > prev:
            acc += float(integrate(g, prev, t, cfg))
        out.append(acc)
        prev = t
    return np.array(out)


def exponential_martingale_test(samples, H, S, times, params, *, prefix="TSH", level=3.0,
                                cfg=DEFAULT_QUADRATURE):
    """Constancy of ``E[Z_t(H)]`` with ``Z_t = exp(c int_0^t f(S-r) dr + i Y_t(T_{S-t} H))``.

    ``c`` is ``params.exponent_coefficient`` and ``f(u) = ||grad_beta T_u H||^2``.
    Real and imaginary parts are tested separately on the paired difference
    ``Z_t - Z_0``.
    """
    times = [float(t) for t in times]
    if 0.0 not in times:
        times = [0.0] + times
    ids = [f"{prefix}@{t!r}" for t in times]
    c = params.exponent_coefficient
    dets = exponent_integrals(params, H, S, times, cfg)
    z = []
    for t, fid, d in zip(times, ids, dets):
        y = _series(samples, fid)[:, _at(samples, t)]
        z.append(np.exp(c * d + 1j * y))
    z0 = z[0]
    records, rows = [], []
    for t, zt, d in zip(times, z, dets):
        for part, fn in (("re", np.real), ("im", np.imag)):
            if t == 0:
                continue
            diff = CovEstimate.from_values(fn(zt - z0))
            records.append(_record("exp_martingale_" + part, diff, 0.0, level, t=t))
        rows.append({"t": t, "exponent": d, "mean_re": float(np.mean(zt.real)), "mean_im": float(np.mean(zt.imag))})
    return MartingaleReport(records, all(r.passed for r in records), rows)


@dataclass
class PhaseTransitionReport:
    """Empirical covariance curves against oracles, one row group per regime."""

    rows: list
    separation: float | None
    separation_time: float | None
    status: str
    threshold: float

    @property
    def passed(self):
        return all(r["pass"] for r in self.rows)

    @property
    def separated(self):
        return self.status == "separated"

    def summary(self):
        recs = [
            SummaryRecord("covariance", r["empirical"], r["oracle"], r["std_error"], r["z"], r["pass"],
                          {"regime": r["regime"], "t": r["t"]})
            for r in self.rows
        ]
        return recs


def phase_transition_report(campaigns, h_id, H, times, *, level=3.0, threshold=5.0, atom=False,
                            cfg=DEFAULT_QUADRATURE):
    """Compare ``E[Y_t(H) Y_0(H)]`` across regimes.

    Parameters
    ----------
    campaigns : mapping label -> (FieldSamples, OUParams)
    h_id : str
        Function id of ``H`` in every campaign.
    times : sequence of float
    atom : bool
        Use the ``L2_beta`` pairing (with the atom at 0) in the Robin oracle.

    Returns
    -------
    PhaseTransitionReport
        ``status`` is ``"separated"`` when at some time every pair of oracle
        curves differs by more than ``threshold`` combined standard errors,
        ``"inconclusive"`` when no time achieves that, and ``"single"`` with
        fewer than two regimes.
    """
    rows = []
    per = {}
    for label, (samples, params) in campaigns.items():
        oracle = oracle_curve(params, H, H, times, atom=atom, cfg=cfg)
        ests = [empirical_covariance(samples, h_id, h_id, t) for t in times]
        per[label] = (oracle, np.array([e.std_error for e in ests]))
        for t, o, e in zip(times, oracle, ests):
            z = e.z(o)
            rows.append({"regime": label, "t": float(t), "empirical": e.mean, "std_error": e.std_error,
                         "oracle": float(o), "z": float(z), "pass": bool(abs(z) <= level)})
    if len(per) < 2:
        return PhaseTransitionReport(rows, None, None, "single", threshold)
    best, best_t = -math.inf, None
    for i, t in enumerate(times):
        sep = min(
            abs(per[a][0][i] - per[b][0][i]) / math.hypot(per[a][1][i], per[b][1][i])
            for a, b in combinations(per, 2)
        )
        if sep > best:
            best, best_t = sep, float(t)
    status = "separated" if best > threshold else "inconclusive"
    return PhaseTransitionReport(rows, float(best), best_t, status, threshold)


def write_records(records, path, preamble=()):
    """Write dict records as comma-separated text; ``preamble`` lines become ``#`` comments."""
    records = [r.to_record() if hasattr(r, "to_record") else dict(r) for r in records]
    keys = []
    for r in records:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        for line in preamble:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
