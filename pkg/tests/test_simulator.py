import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slowbond.simulator import (
    ConfigError,
    FieldSamples,
    LatticeConfig,
    OrderingError,
    SampleFormatError,
    StateSpaceError,
    bond_rates,
    exact_small_ctmc,
    fluctuation,
    init,
    lattice_values,
    read_samples_csv,
    simulate,
    simulate_occupations,
    step_to,
)
from slowbond.testfn import hermite_gauss

GAUSS = hermite_gauss((1.0,))
ODD = hermite_gauss((0.0, 1.0), a=4.0)


def small(beta, alpha=1.0, times=(0.0, 1.0), rho=0.5, L=2):
    return LatticeConfig(n=1, L=L, beta=beta, alpha=alpha, rho=rho, T=max(times), sample_times=times,
                         seed=7, check_window=False)


# ---------------------------------------------------------------------------
# configuration


def test_rates_and_geometry():
    cfg = LatticeConfig(n=4, L=12, beta=1.0, alpha=2.0)
    assert cfg.n_sites == 24 and cfg.slow_bond == 11
    rates = bond_rates(cfg)
    assert rates.size == 23
    assert rates[11] == pytest.approx(2.0 * 4.0)
    assert np.all(np.delete(rates, 11) == 16.0)
    assert cfg.total_rate == pytest.approx(rates.sum())
    assert LatticeConfig(n=4, L=12, beta=math.inf).slow_rate == 0.0
    assert LatticeConfig(n=4, L=12, beta=0.5, alpha=3.0).slow_rate == pytest.approx(3.0 * 4**1.5)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n": 0},
        {"L": 5},
        {"rho": 1.5},
        {"alpha": 0.0},
        {"beta": -1.0},
        {"sample_times": (0.0, 2.0)},
        {"sample_times": (0.5, 0.1)},
        {"seed": -1},
    ],
)
def test_config_errors(kwargs):
    base = dict(n=2, L=6, beta=1.0, T=1.0)
    base.update(kwargs)
    with pytest.raises(ConfigError):
        LatticeConfig(**base)


# ---------------------------------------------------------------------------
# initial state and dynamics


@pytest.mark.parametrize("rho, value", [(0.0, 0), (1.0, 1)])
def test_degenerate_density_is_frozen(rho, value):
    cfg = LatticeConfig(n=3, L=9, beta=1.0, rho=rho, T=1.0)
    st_ = init(cfg)
    assert np.all(st_.occupation == value)
    step_to(st_, 1.0, cfg)
    assert np.all(st_.occupation == value) and st_.time == 1.0


def test_initial_mean_binomial_band():
    cfg = LatticeConfig(n=1, L=50_000, beta=1.0, rho=0.5, check_window=False)
    mean = init(cfg).occupation.mean()
    assert abs(mean - 0.5) <= 3 * 0.5 / math.sqrt(1e5)


def test_stationary_marginals():
    cfg = LatticeConfig(n=5, L=15, beta=1.0, rho=0.3, T=0.5, sample_times=(0.0, 0.5), seed=11)
    occ = simulate_occupations(cfg, 3000)
    for j in range(2):
        m = occ[:, j, :].mean()
        se = math.sqrt(0.3 * 0.7 / occ[:, j, :].size)
        assert abs(m - 0.3) <= 3 * se  # sites are independent at a fixed time


def test_particle_number_conserved():
    cfg = LatticeConfig(n=5, L=15, beta=0.5, rho=0.4, T=1.0, sample_times=np.linspace(0, 1, 6), seed=2)
    occ = simulate_occupations(cfg, 50)
    counts = occ.sum(axis=2)
    assert np.all(counts == counts[:, :1])


def test_no_crossing_when_bond_is_closed():
    cfg = LatticeConfig(n=5, L=15, beta=math.inf, rho=0.4, T=1.0, sample_times=np.linspace(0, 1, 6), seed=2)
    occ = simulate_occupations(cfg, 50)
    left = occ[:, :, : cfg.L].sum(axis=2)
    assert np.all(left == left[:, :1])


def test_step_backwards_rejected():
    cfg = LatticeConfig(n=2, L=6, beta=1.0, T=1.0)
    s = init(cfg)
    step_to(s, 0.5, cfg)
    with pytest.raises(OrderingError):
        step_to(s, 0.4, cfg)


def test_split_steps_diffuse_like_one_step():
    # a lone walker far from the slow bond: variance 2 n^2 t, however time is chopped
    cfg = LatticeConfig(n=10, L=60, beta=math.inf, rho=0.0, T=0.05)
    start = 90
    var = {}
    for pieces in (1, 5):
        pos = []
        for r in range(3000):
            s = init(cfg, replica=r)
            s.occupation[start] = 1
            for t in np.linspace(0, 0.05, pieces + 1)[1:]:
                step_to(s, t, cfg)
            pos.append(np.argmax(s.occupation) - start)
        var[pieces] = np.var(pos)
    target = 2 * 100 * 0.05
    se = target * math.sqrt(2 / 3000)
    for v in var.values():
        assert abs(v - target) <= 4 * se


# ---------------------------------------------------------------------------
# exact chain and simulation against it


def _pair(i, j):
    return (lambda s: s[:, i] - 0.5), (lambda s: s[:, j] - 0.5)


def test_exact_chain_time_zero_is_static():
    f, g = _pair(1, 1)
    assert exact_small_ctmc([1, 1, 1], 0.0, f, g) == pytest.approx(0.25)
    f, g = _pair(0, 2)
    assert exact_small_ctmc([1, 1, 1], 0.0, f, g) == pytest.approx(0.0, abs=1e-15)


def test_exact_chain_reflection_symmetry():
    a = exact_small_ctmc([1, 1, 1, 1], 0.7, *_pair(0, 1))
    b = exact_small_ctmc([1, 1, 1, 1], 0.7, *_pair(4, 3))
    assert a == pytest.approx(b, abs=1e-14)


def test_exact_chain_closed_bond_blocks():
    # no dynamics across a zero-rate bond: cross covariance stays at its t=0 value
    f, g = _pair(0, 3)
    assert exact_small_ctmc([1, 0, 1], 2.0, f, g) == pytest.approx(0.0, abs=1e-14)
    f, g = _pair(0, 0)
    two_site = exact_small_ctmc([1], 2.0, *_pair(0, 0))
    assert exact_small_ctmc([1, 0, 1], 2.0, f, g) == pytest.approx(two_site, abs=1e-14)


def test_exact_chain_single_walker_formula():
    # <eta_t(x) eta_0(y)> - rho^2 = chi * p_t(y, x) for the two-site walk
    val = exact_small_ctmc([1.0], 0.3, *_pair(0, 1))
    assert val == pytest.approx(0.25 * 0.5 * (1 - math.exp(-0.6)), abs=1e-14)


def test_exact_chain_caps():
    with pytest.raises(StateSpaceError):
        exact_small_ctmc([1] * 12, 1.0, *_pair(0, 1))
    with pytest.raises(OrderingError):
        exact_small_ctmc([1], -1.0, *_pair(0, 1))


@pytest.mark.parametrize("beta, alpha", [(math.inf, 1.0), (1.0, 0.1), (1.0, 1.0)], ids=["closed", "slow", "unit"])
def test_four_site_chain_matches_exact(beta, alpha):
    times = (0.0, 0.25, 0.5, 0.75, 1.0)  # several steps exercise the stream hand-off
    cfg = small(beta, alpha, times)
    occ = simulate_occupations(cfg, 20_000).astype(float)
    rates = bond_rates(cfg)
    for x, y in ((1, 2), (0, 2), (2, 1), (3, 0)):
        prod = (occ[:, -1, x] - 0.5) * (occ[:, 0, y] - 0.5)
        exact = exact_small_ctmc(rates, 1.0, *_pair(x, y))
        z = (prod.mean() - exact) / (prod.std(ddof=1) / math.sqrt(prod.size))
        assert abs(z) < 4, (x, y, z)


# ---------------------------------------------------------------------------
# field values


def test_fluctuation_linear_and_centred():
    cfg = LatticeConfig(n=4, L=12, beta=1.0, rho=0.5)
    s = init(cfg, replica=3)
    a = fluctuation(s, GAUSS, cfg)
    assert fluctuation(s, -1 * GAUSS, cfg) == pytest.approx(-a, abs=1e-15)
    empty = LatticeConfig(n=4, L=12, beta=1.0, rho=0.0)
    assert fluctuation(init(empty), GAUSS, empty) == 0.0


def test_lattice_values_cached_and_readonly():
    cfg = LatticeConfig(n=4, L=12, beta=1.0)
    v = lattice_values(GAUSS, cfg)
    assert v is lattice_values(GAUSS, cfg)
    assert not v.flags.writeable
    assert v[cfg.L] == 1.0  # site 0


def test_static_variance():
    cfg = LatticeConfig(n=20, L=60, beta=1.0, rho=0.5, seed=5)
    s = simulate(cfg, {"g": GAUSS}, 4000).series("g", 0.0)
    exact = 0.25 * np.sum(lattice_values(GAUSS, cfg) ** 2) / cfg.n
    se = exact * math.sqrt(2 / s.size)
    assert abs(np.var(s) - exact) <= 3 * se


def test_reversibility():
    cfg = LatticeConfig(n=5, L=15, beta=1.0, rho=0.5, T=0.1, sample_times=(0.0, 0.1), seed=9)
    s = simulate(cfg, {"h": ODD, "g": GAUSS}, 4000)
    a = s.series("h", 0.1) * s.series("g", 0.0)
    b = s.series("h", 0.0) * s.series("g", 0.1)
    d = a - b
    assert abs(d.mean()) <= 3 * d.std(ddof=1) / math.sqrt(d.size)


def test_determinism_and_worker_independence():
    cfg = LatticeConfig(n=3, L=9, beta=1.0, T=0.3, sample_times=(0.0, 0.1, 0.3), seed=123)
    a = simulate(cfg, {"h": ODD}, 12, workers=1)
    b = simulate(cfg, {"h": ODD}, 12, workers=1)
    c = simulate(cfg, {"h": ODD}, 12, workers=2)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.values, c.values)
    other = LatticeConfig(n=3, L=9, beta=1.0, T=0.3, sample_times=(0.0, 0.1, 0.3), seed=124)
    assert not np.array_equal(a.values, simulate(other, {"h": ODD}, 12).values)


def test_zero_replicas_and_bad_ids():
    cfg = LatticeConfig(n=2, L=6, beta=1.0)
    assert simulate(cfg, {"h": ODD}, 0).values.shape == (0, 1, 1)
    with pytest.raises(ConfigError):
        simulate(cfg, {"a,b": ODD}, 1)
    with pytest.raises(ConfigError):
        simulate(cfg, {"h": ODD}, -1)


def test_stream_view():
    cfg = LatticeConfig(n=2, L=6, beta=1.0, T=0.2, sample_times=(0.0, 0.2))
    s = simulate(cfg, {"h": ODD, "g": GAUSS}, 2)
    rows = list(s.stream(1))
    assert [r.t for r in rows] == [0.0, 0.2]
    assert rows[1].values["g"] == s.values[1, 1, 1]


# ---------------------------------------------------------------------------
# sample files


@given(st.integers(1, 4), st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=3))
def test_csv_round_trip(tmp_path_factory, reps, vals):
    path = tmp_path_factory.mktemp("csv") / "s.csv"
    times = np.array([0.0, 0.1, 0.30000000000000004])
    values = np.array(vals)[None, None, :] * np.arange(1, reps + 1)[:, None, None] * np.ones((1, 3, 1))
    s = FieldSamples(times, tuple(f"f{i}" for i in range(len(vals))), values)
    s.to_csv(path, preamble=["seed=1"])
    back = read_samples_csv(path)
    assert np.array_equal(back.times, times) and back.function_ids == s.function_ids
    assert np.array_equal(back.values, values)


def _write(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    return p


@pytest.mark.parametrize(
    "body, line",
    [
        ("# c\nreplica,t,function_id,value\n0,0.0,h,1.0\n0,0.0,h\n", 4),
        ("replica,t,function_id,value\n0,0.0,h,1.0\n0,0.0,h,2.0\n", 3),
        ("replica,t,function_id,value\n0,zero,h,1.0\n", 2),
        ("replica,t,id,value\n", 1),
    ],
)
def test_csv_errors_carry_line(tmp_path, body, line):
    with pytest.raises(SampleFormatError) as info:
        read_samples_csv(_write(tmp_path, body))
    assert info.value.row == line


def test_csv_incomplete_grid(tmp_path):
    body = "replica,t,function_id,value\n0,0.0,h,1.0\n0,0.1,g,1.0\n"
    with pytest.raises(SampleFormatError):
        read_samples_csv(_write(tmp_path, body))
