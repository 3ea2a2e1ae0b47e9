"""Continuous-time simulation of the exclusion process with a slow bond.

Sites ``-L..L-1`` carry occupation variables. Bond ``{x, x+1}`` swaps its two
occupations at rate ``n**2`` (the diffusive clock), except the slow bond
``{-1, 0}`` which swaps at rate ``alpha * n**(2 - beta)`` (zero for
``beta = inf``). Outer ends are reflecting.

Events are generated by uniformization: over a macroscopic interval ``dt``
the number of clock rings is Poisson with mean ``R * dt`` where ``R`` is the
total rate, and each ring picks the slow bond with probability
``r_slow / R`` or else a uniform normal bond. Since the chain is only observed
at the sample times this is equal in law to drawing exponential holding times.
Ring counts come from a Philox generator and bond picks from a splitmix64
counter stream, both keyed per replica.
"""

from __future__ import annotations

import math
import os
from collections.abc import Mapping
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numba as nb
import numpy as np
from scipy.linalg import expm

__all__ = [
    "ConfigError",
    "OrderingError",
    "StateSpaceError",
    "SampleFormatError",
    "LatticeConfig",
    "ReplicaRNG",
    "ParticleState",
    "FieldSample",
    "FieldSamples",
    "bond_rates",
    "init",
    "step_to",
    "lattice_values",
    "fluctuation",
    "exact_small_ctmc",
    "simulate",
    "simulate_occupations",
    "read_samples_csv",
]

SAMPLE_COLUMNS = ("replica", "t", "function_id", "value")


class ConfigError(ValueError):
    """Invalid lattice or campaign configuration."""


class OrderingError(ValueError):
    """Attempt to advance a state backwards in time."""


class StateSpaceError(ValueError):
    """Exact chain requested on more sites than the enumeration cap."""


class SampleFormatError(ValueError):
    """Malformed sample file; ``row`` is the 1-based line number."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class LatticeConfig:
    """Parameters of one simulation campaign.

    ``check_window`` enforces ``L >= 3 n`` so that Gaussian-decaying test
    functions see no truncation; the small exact-chain checks switch it off.
    """

    n: int
    L: int
    beta: float
    alpha: float = 1.0
    rho: float = 0.5
    T: float = 1.0
    sample_times: tuple = (0.0,)
    seed: int = 0
    check_window: bool = True

    def __post_init__(self):
        object.__setattr__(self, "sample_times", tuple(float(s) for s in self.sample_times))
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n!r}")
        if int(self.L) != self.L or self.L < 1:
            raise ConfigError(f"L must be a positive integer, got {self.L!r}")
        if self.check_window and self.L < 3 * self.n:
            raise ConfigError(f"L={self.L} is below 3n={3 * self.n}")
        if not (0.0 <= self.rho <= 1.0):
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho!r}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha!r}")
        if not (self.beta >= 0):
            raise ConfigError(f"beta must be >= 0, got {self.beta!r}")
        if not self.T >= 0:
            raise ConfigError(f"horizon T must be >= 0, got {self.T!r}")
        times = np.asarray(self.sample_times)
        if times.size and (times.min() < 0 or times.max() > self.T):
            raise ConfigError("sample_times must lie in [0, T]")
        if np.any(np.diff(times) < 0):
            raise ConfigError("sample_times must be non-decreasing")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def sites(self):
        return np.arange(-self.L, self.L)

    @property
    def n_sites(self):
        return 2 * self.L

    @property
    def slow_bond(self):
        """Index of the bond ``{-1, 0}`` counted from the left end."""
        return self.L - 1

    @property
    def normal_rate(self):
        return float(self.n) ** 2

    @property
    def slow_rate(self):
        if math.isinf(self.beta):
            return 0.0
        return self.alpha * float(self.n) ** (2.0 - self.beta)

    @property
    def total_rate(self):
        return self.normal_rate * (self.n_sites - 2) + self.slow_rate

    @property
    def chi(self):
        return self.rho * (1.0 - self.rho)

    def to_record(self):
        return {
            "n": self.n,
            "L": self.L,
            "beta": "inf" if math.isinf(self.beta) else self.beta,
            "alpha": self.alpha,
            "rho": self.rho,
            "T": self.T,
            "sample_times": list(self.sample_times),
            "seed": int(self.seed),
        }


def bond_rates(config):
    """Swap rate of every bond ``{x, x+1}``, ``x = -L..L-2``."""
    rates = np.full(config.n_sites - 1, config.normal_rate)
    rates[config.slow_bond] = config.slow_rate
    return rates


@dataclass
class ReplicaRNG:
    """Per-replica random streams.

    ``key``/``counter`` drive the splitmix64 stream for bond picks;
    ``counts`` is a Philox generator for ring counts and initial occupations.
    """

    key: np.uint64
    counter: np.uint64
    counts: np.random.Generator

    @classmethod
    def from_seed(cls, seed, replica=0):
        ss = np.random.SeedSequence(int(seed), spawn_key=(int(replica),))
        key_words, philox_words = ss.generate_state(1, np.uint64), ss.generate_state(2, np.uint64)
        return cls(
            key=np.uint64(key_words[0]),
            counter=np.uint64(0),
            counts=np.random.Generator(np.random.Philox(key=philox_words)),
        )


@dataclass
class ParticleState:
    """Occupations (one byte per site), macroscopic time, and random streams."""

    occupation: np.ndarray
    time: float
    rng: ReplicaRNG = field(repr=False)

    @property
    def particles(self):
        return int(self.occupation.sum())


def init(config, seed=None, replica=0):
    """Draw a configuration from the Bernoulli(rho) product measure at time 0."""
    if not (0.0 <= config.rho <= 1.0):
        raise ConfigError(f"rho must lie in [0, 1], got {config.rho!r}")
    rng = ReplicaRNG.from_seed(config.seed if seed is None else seed, replica)
    occ = (rng.counts.random(config.n_sites) < config.rho).astype(np.uint8)
    return ParticleState(occupation=occ, time=0.0, rng=rng)


@nb.njit(cache=True, nogil=True)
def _advance(occ, key, counter, rings, normal_rate, slow_rate, slow_bond, n_normal):
    total = normal_rate * n_normal + slow_rate
    scale = total / 9007199254740992.0
    inv = 1.0 / normal_rate
    golden = np.uint64(0x9E3779B97F4A7C15)
    m1 = np.uint64(0xBF58476D1CE4E5B9)
    m2 = np.uint64(0x94D049BB133111EB)
    one = np.uint64(1)
    c = np.uint64(counter)
    for _ in range(rings):
        c += one
        z = key + c * golden
        z = (z ^ (z >> np.uint64(30))) * m1
        z = (z ^ (z >> np.uint64(27))) * m2
        z = z ^ (z >> np.uint64(31))
        # uniform on [0, total) from the top 53 bits
        u = (z >> np.uint64(11)) * scale
        if u < slow_rate:
            b = slow_bond
        else:
            b = np.int64((u - slow_rate) * inv)
            if b >= n_normal:
                b = n_normal - 1
            if b >= slow_bond:
                b += 1
        a = occ[b]
        occ[b] = occ[b + 1]
        occ[b + 1] = a
    return c


def step_to(state, t_target, config):
    """Advance ``state`` in place to macroscopic time ``t_target`` and return it."""
    dt = t_target - state.time
    if dt < 0:
        raise OrderingError(f"cannot step from t={state.time} back to t={t_target}")
    rate = config.total_rate
    if dt > 0 and rate > 0:
        rings = int(state.rng.counts.poisson(rate * dt))
        # keep the counter uint64: an int64 argument would promote to float in the kernel
        state.rng.counter = np.uint64(_advance(
            state.occupation,
            state.rng.key,
            np.uint64(state.rng.counter),
            rings,
            config.normal_rate,
            config.slow_rate,
            config.slow_bond,
            config.n_sites - 2,
        ))
    state.time = float(t_target)
    return state


@lru_cache(maxsize=128)
def _lattice_values(H, n, L):
    x = np.arange(-L, L) / n
    vals = np.asarray(H(x), dtype=float)
    vals.setflags(write=False)
    return vals


def lattice_values(H, config):
    """``H(x/n)`` on every site, cached per (H, n, L)."""
    return _lattice_values(H, config.n, config.L)


def fluctuation(state, H, config):
    """Field ``n**-1/2 * sum_x H(x/n) (eta(x) - rho)``."""
    h = lattice_values(H, config)
    return float(h @ (state.occupation - config.rho)) / math.sqrt(config.n)


def exact_small_ctmc(rates, t, f, g, rho=0.5, max_sites=12):
    """``E[f(eta_t) g(eta_0)]`` for the stationary exclusion chain, exactly.

    Parameters
    ----------
    rates : sequence of float
        Swap rate of bond ``{i, i+1}`` for a chain of ``len(rates) + 1`` sites.
    t : float
        Time on the same clock as ``rates``.
    f, g : callable
        Observables mapping an ``(m, sites)`` 0/1 array to ``m`` values.
    rho : float
        Density of the Bernoulli product start.

    Notes
    -----
    The generator is built on all ``2**sites`` configurations and
    exponentiated by scaling and squaring.
    """
    rates = np.asarray(rates, dtype=float)
    sites = rates.size + 1
    if sites > max_sites:
        raise StateSpaceError(f"{sites} sites exceeds the cap of {max_sites}")
    if t < 0:
        raise OrderingError("t must be >= 0")
    states = np.array(list(product((0, 1), repeat=sites)), dtype=np.int64)
    weights = 2 ** np.arange(sites - 1, -1, -1)
    index = states @ weights
    m = states.shape[0]
    Q = np.zeros((m, m))
    for b, r in enumerate(rates):
        if r == 0:
            continue
        differ = states[:, b] != states[:, b + 1]
        swapped = states[differ].copy()
        swapped[:, [b, b + 1]] = swapped[:, [b + 1, b]]
        Q[index[differ], swapped @ weights] += r
    Q[np.diag_indices(m)] = -Q.sum(axis=1)
    k = states.sum(axis=1)
    pi = rho**k * (1.0 - rho) ** (sites - k)
    fv = np.asarray(f(states), dtype=float)
    gv = np.asarray(g(states), dtype=float)
    evolved = expm(t * Q) @ fv if t > 0 else fv
    return float(np.sum(pi * gv * evolved))


@dataclass(frozen=True)
class FieldSample:
    """Field values of one replica at one time, keyed by function id."""

    t: float
    values: Mapping[str, float]


@dataclass
class FieldSamples:
    """Field values of a campaign, indexed ``[replica, time, function]``."""

    times: np.ndarray
    function_ids: tuple
    values: np.ndarray

    @property
    def replicas(self):
        return self.values.shape[0]

    def time_index(self, t, atol=1e-12):
        hit = np.flatnonzero(np.abs(self.times - t) <= atol)
        if hit.size == 0:
            raise KeyError(f"no samples at t={t}")
        return int(hit[0])

    def series(self, function_id, t=None):
        """Replica-by-time array (or replica vector at ``t``) for one function."""
        j = self.function_ids.index(function_id)
        if t is None:
            return self.values[:, :, j]
        return self.values[:, self.time_index(t), j]

    def stream(self, replica):
        for i, t in enumerate(self.times):
            yield FieldSample(float(t), dict(zip(self.function_ids, self.values[replica, i].tolist())))

    def to_csv(self, path, preamble=()):
        """Write ``replica,t,function_id,value`` rows in replica, time, function order.

        ``preamble`` lines are written first as ``#`` comments.
        """
        with open(path, "w", newline="") as fh:
            for line in preamble:
                fh.write(f"# {line}\n")
            fh.write(",".join(SAMPLE_COLUMNS) + "\n")
            for r in range(self.replicas):
                for i, t in enumerate(self.times):
                    ts = repr(float(t))
                    for j, fid in enumerate(self.function_ids):
                        fh.write(f"{r},{ts},{fid},{float(self.values[r, i, j])!r}\n")


def read_samples_csv(path):
    """Parse a sample file written by :meth:`FieldSamples.to_csv`.

    Lines starting with ``#`` are skipped; errors carry the file line number.
    """
    rows = {}
    times, fids = {}, {}
    replicas = set()
    header_seen = False
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if not header_seen:
                if line != ",".join(SAMPLE_COLUMNS):
                    raise SampleFormatError(f"expected header {','.join(SAMPLE_COLUMNS)!r}, got {line!r}", lineno)
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != len(SAMPLE_COLUMNS):
                raise SampleFormatError(f"expected {len(SAMPLE_COLUMNS)} columns, got {len(parts)}", lineno)
            try:
                r, t, fid, v = int(parts[0]), float(parts[1]), parts[2], float(parts[3])
            except ValueError as exc:
                raise SampleFormatError(str(exc), lineno) from None
            if (r, t, fid) in rows:
                raise SampleFormatError(f"duplicate entry for replica {r}, t={t}, {fid}", lineno)
            rows[(r, t, fid)] = v
            times.setdefault(t, len(times))
            fids.setdefault(fid, len(fids))
            replicas.add(r)
    if not header_seen:
        raise SampleFormatError("missing header row", 1)
    tt = np.array(sorted(times))
    fid_list = tuple(fids)
    nrep = len(replicas)
    if replicas and replicas != set(range(nrep)):
        raise SampleFormatError("replica indices must be 0..R-1")
    values = np.full((nrep, tt.size, len(fid_list)), np.nan)
    tpos = {t: i for i, t in enumerate(tt)}
    for (r, t, fid), v in rows.items():
        values[r, tpos[t], fid_list.index(fid)] = v
    if np.isnan(values).any():
        raise SampleFormatError("incomplete sample grid")
    return FieldSamples(times=tt, function_ids=fid_list, values=values)


def _run_chunk(config, weights, replicas):
    scale = 1.0 / math.sqrt(config.n)
    times = config.sample_times
    out = np.empty((len(replicas), len(times), weights.shape[0]))
    for i, r in enumerate(replicas):
        state = init(config, replica=r)
        for j, t in enumerate(times):
            step_to(state, t, config)
            out[i, j] = weights @ (state.occupation - config.rho) * scale
    return out


def default_workers():
    """Worker count from ``SLOWBOND_WORKERS``, else 1."""
    raw = os.environ.get("SLOWBOND_WORKERS", "1")
    try:
        w = int(raw)
    except ValueError:
        raise ConfigError(f"SLOWBOND_WORKERS must be an integer, got {raw!r}") from None
    if w < 1:
        raise ConfigError("SLOWBOND_WORKERS must be >= 1")
    return w


def _chunks(total, parts):
    bounds = np.linspace(0, total, parts + 1).astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def simulate(config, functions, replicas, workers=None):
    """Run ``replicas`` independent stationary trajectories and sample fields.

    Parameters
    ----------
    config : LatticeConfig
    functions : mapping of id -> callable
        Test functions; each is evaluated once on the lattice.
    replicas : int
    workers : int, optional
        Process count; results are identical for any value.

    Returns
    -------
    FieldSamples
    """
    if replicas < 0:
        raise ConfigError("replicas must be >= 0")
    ids = tuple(functions)
    if any("," in fid for fid in ids):
        raise ConfigError("function ids must not contain commas")
    weights = np.array([lattice_values(functions[k], config) for k in ids]).reshape(len(ids), config.n_sites)
    workers = default_workers() if workers is None else int(workers)
    times = np.array(config.sample_times)
    if replicas == 0:
        return FieldSamples(times, ids, np.empty((0, times.size, len(ids))))
    chunks = _chunks(replicas, min(workers, replicas) * 4 if workers > 1 else 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, [config] * len(chunks), [weights] * len(chunks), chunks))
    else:
        parts = [_run_chunk(config, weights, c) for c in chunks]
    return FieldSamples(times, ids, np.concatenate(parts, axis=0))


def simulate_occupations(config, replicas):
    """Occupations at every sample time, shape ``(replicas, times, sites)``."""
    out = np.empty((replicas, len(config.sample_times), config.n_sites), dtype=np.uint8)
    for r in range(replicas):
        state = init(config, replica=r)
        for j, t in enumerate(config.sample_times):
            step_to(state, t, config)
            out[r, j] = state.occupation
    return out
