"""Heat semigroups on the line, with Neumann, Dirichlet and Robin conditions at 0.

Every evaluator returns ``d^k/dx^k (T_t H)(x)`` by quadrature against exact
kernel derivatives; nothing here time-steps a PDE. Integrals over the
real line are folded onto ``[0, inf)`` so that jumps of ``H`` at the origin
sit at the end of an integration panel.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx

from .kernels import DEFAULT_QUADRATURE, heat_kernel, heat_kernel_deriv, heat_kernel_derivs, integrate
from .testfn import (
    DEFAULT_KMAX,
    LINE,
    NEUMANN,
    ROBIN,
    Branch,
    SeminormIndex,
    TestFunction,
    grad_beta,
    laplace_beta,
    metric,
    seminorm_table,
)

ROUTES = ("reduction", "direct", "both")
ROUTE_TOLERANCE = 1e-6


class ConsistencyError(RuntimeError):
    """The two Robin evaluation routes disagree."""


def _as_array(x):
    x = np.asarray(x, dtype=float)
    return np.atleast_1d(x), x.ndim == 0


def _finish(vals, scalar):
    return float(vals[0]) if scalar else vals


def _halfline(parts, x, t, k, cfg, radius, feature):
    """``sum_j int_0^inf f_j(y) phi_t^(k)(x - s_j y) dy`` for a vector of ``x``.

    ``parts`` holds ``(f_j, s_j)`` pairs with ``s_j`` in ``{+1, -1}``; each
    ``f_j`` maps a node array to values.
    """
    sigma = math.sqrt(2.0 * t)
    reach = cfg.truncation_sigmas * sigma
    centers = np.concatenate([s * x for _, s in parts])
    lo = max(0.0, float(centers.min()) - reach)
    hi = min(radius, float(centers.max()) + reach)
    if hi <= lo:
        return np.zeros(x.shape)
    step = min(sigma, feature)
    edges = np.linspace(lo, hi, max(2, int(math.ceil((hi - lo) / step)) + 1))

    def integrand(y):
        out = np.zeros((y.size, x.size))
        for f, s in parts:
            fy = np.asarray(f(y), dtype=float)
            out += fy[:, None] * heat_kernel_deriv(t, x[None, :] - s * y[:, None], k)
        return out

    return integrate(integrand, lo, hi, cfg, breakpoints=edges)


def _pieces(H):
    right = lambda y: H.right.deriv(y, 0)  # noqa: E731
    left = lambda y: H.left.deriv(-y, 0)  # noqa: E731
    return right, left


def _support(H, t, cfg):
    return H.radius + cfg.truncation_sigmas * math.sqrt(2.0 * t), H.feature


def _split(x, side):
    return (x > 0) | ((x == 0) & (side > 0))


# ---------------------------------------------------------------------------
# whole line, Neumann, Dirichlet


def apply_line(t, H, x, k=0, side=1, cfg=DEFAULT_QUADRATURE):
    """``d^k/dx^k (phi_t * H)(x)``; ``t = 0`` returns ``H``'s own derivative."""
    if t == 0:
        return H.eval(x, k, side)
    xs, scalar = _as_array(x)
    right, left = _pieces(H)
    R, feat = _support(H, 0.0, cfg)
    vals = _halfline([(right, 1.0), (left, -1.0)], xs, t, k, cfg, R, feat)
    return _finish(vals, scalar)


def apply_neumann(t, H, x, k=0, side=1, cfg=DEFAULT_QUADRATURE):
    """Reflected-kernel semigroup: each half-line evolves its own even extension."""
    if t == 0:
        return H.eval(x, k, side)
    xs, scalar = _as_array(x)
    right, left = _pieces(H)
    R, feat = _support(H, 0.0, cfg)
    pos = _split(xs, side)
    out = np.empty(xs.shape)
    if pos.any():
        out[pos] = _halfline([(right, 1.0), (right, -1.0)], xs[pos], t, k, cfg, R, feat)
    if (~pos).any():
        out[~pos] = _halfline([(left, 1.0), (left, -1.0)], xs[~pos], t, k, cfg, R, feat)
    return _finish(out, scalar)


def apply_dirichlet(t, v0, x, k=0, cfg=DEFAULT_QUADRATURE):
    """Absorbing-boundary semigroup on ``[0, inf)``.

    ``v0`` is a :class:`TestFunction` (its right branch is used) or a plain
    callable; ``x`` must be non-negative.
    """
    xs, scalar = _as_array(x)
    if np.any(xs < 0):
        raise ValueError("Dirichlet semigroup lives on x >= 0")
    if isinstance(v0, TestFunction):
        f = lambda y: v0.right.deriv(y, 0)  # noqa: E731
        R, feat = v0.radius, v0.feature
        if t == 0:
            return _finish(np.asarray(v0.right.deriv(xs, k)), scalar)
    else:
        f, R, feat = v0, 30.0, 0.25
        if t == 0:
            if k:
                raise ValueError("t = 0 derivatives need a TestFunction initial datum")
            return _finish(np.asarray(f(xs), dtype=float), scalar)
    neg = lambda y: -f(y)  # noqa: E731
    vals = _halfline([(f, 1.0), (neg, -1.0)], xs, t, k, cfg, R, feat)
    return _finish(vals, scalar)


# ---------------------------------------------------------------------------
# Robin


def robin_tail_kernel(t, a, h, k):
    """``E_k(a) = int_0^inf exp(-h s) phi_t^(k)(a + s) ds``.

    ``E_0`` is an erfc expression written through ``erfcx`` to avoid overflow;
    higher orders follow from ``E_k = h E_{k-1} - phi_t^(k-1)(a)``.
    """
    a = np.asarray(a, dtype=float)
    u = (a + 2.0 * h * t) / (2.0 * math.sqrt(t))
    gauss = np.exp(-a * a / (4.0 * t))
    e = np.empty(a.shape)
    up = u >= 0
    if up.all():
        e = 0.5 * erfcx(u) * gauss
    else:
        e[up] = 0.5 * erfcx(u[up]) * gauss[up]
        dn = ~up
        e[dn] = np.exp(h * a[dn] + h * h * t) - 0.5 * erfcx(-u[dn]) * gauss[dn]
    if k:
        phis = heat_kernel_derivs(t, a, k - 1)
        for j in range(1, k + 1):
            e = h * e - phis[j - 1]
    return e


def _robin_parts(H):
    # even and odd parts of H restricted to y > 0, plus the odd part's slope
    def even(y):
        return 0.5 * (H.right.deriv(y, 0) + H.left.deriv(-y, 0))

    def odd(y):
        return 0.5 * (H.right.deriv(y, 0) - H.left.deriv(-y, 0))

    def odd_slope(y):
        return 0.5 * (H.right.deriv(y, 1) + H.left.deriv(-y, 1))

    return even, odd, odd_slope


def _robin_odd_reduction(t, alpha, H, r, k, cfg):
    """Half-line Robin solution ``w^(k)(r)``, ``r >= 0``, from the Dirichlet reduction.

    ``v = 2 alpha w - w'`` solves the absorbing problem with datum
    ``v0 = 2 alpha g_odd - g_odd'``; ``w(r) = int_0^inf exp(-2 alpha s) v(r + s) ds``.
    The ``s`` integral is done in closed form after exchanging the order.
    """
    h = 2.0 * alpha
    _, odd, odd_slope = _robin_parts(H)
    R, feat = _support(H, 0.0, cfg)
    sigma = math.sqrt(2.0 * t)
    step = min(sigma, feat, 1.0 / h)
    edges = np.linspace(0.0, R, max(2, int(math.ceil(R / step)) + 1))

    def integrand(y):
        v0 = h * odd(y) - odd_slope(y)
        ker = robin_tail_kernel(t, r[None, :] - y[:, None], h, k) - robin_tail_kernel(
            t, r[None, :] + y[:, None], h, k
        )
        return v0[:, None] * ker

    return integrate(integrand, 0.0, R, cfg, breakpoints=edges)


def _printed_kernel(t, alpha, z, y, k):
    # d^k/dz^k of ((z-y+4at)/2t) phi(z-y) + ((z+y-4at)/2t) phi(z+y), by Leibniz
    out = np.zeros(np.broadcast(z, y).shape)
    for arg, shift in ((z - y, 4.0 * alpha * t), (z + y, -4.0 * alpha * t)):
        out = out + (arg + shift) / (2.0 * t) * heat_kernel_deriv(t, arg, k)
        if k:
            out = out + k / (2.0 * t) * heat_kernel_deriv(t, arg, k - 1)
    return out


def _robin_odd_direct(t, alpha, H, r, k, cfg, max_halvings=6):
    """Half-line Robin solution from the printed double integral, nested numerically.

    ``w^(k)(r) = int_r^inf exp(-2 alpha (z - r)) V_k(z) dz`` with
    ``V_k(z) = int_0^inf d_z^k K(z, y) g_odd(y) dy``. The outer integral uses a
    composite Gauss-Legendre rule whose panels start at every requested ``r``.
    """
    h = 2.0 * alpha
    _, odd, _ = _robin_parts(H)
    R, feat = _support(H, 0.0, cfg)
    sigma = math.sqrt(2.0 * t)
    reach = cfg.truncation_sigmas * sigma
    rmax = float(r.max())
    # truncate where exp(-2 alpha (z - r)) < 1e-16 or where V is negligible
    zmax = min(rmax + 16.0 * math.log(10.0) / h, max(rmax, R + reach)) + 1e-12
    anchors = np.unique(r)
    inner_edges = np.linspace(0.0, R, max(2, int(math.ceil(R / min(sigma, feat))) + 1))
    step = min(0.5 * sigma, 0.5 / h, 0.5 * feat)
    prev = None
    for _ in range(max_halvings):
        fill = np.arange(0.0, zmax + step, step)
        edges = np.unique(np.concatenate([anchors, fill[fill < zmax], [zmax]]))
        a, b = edges[:-1], edges[1:]
        nodes, weights = np.polynomial.legendre.leggauss(20)
        z = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * nodes
        wz = 0.5 * (b - a)[:, None] * weights

        def inner(y, z=z):
            ker = _printed_kernel(t, alpha, z.ravel()[None, :], y[:, None], k)
            return odd(y)[:, None] * ker

        V = integrate(inner, 0.0, R, cfg, breakpoints=inner_edges).reshape(z.shape)
        panel = np.sum(wz * np.exp(-h * (z - a[:, None])) * V, axis=1)
        # exp(-h (a_j - r_i)) for panels to the right of r_i
        gap = a[None, :] - r[:, None]
        weight = np.where(gap >= -1e-15, np.exp(-h * np.maximum(gap, 0.0)), 0.0)
        val = weight @ panel
        if prev is not None:
            scale = max(1.0, float(np.max(np.abs(val))))
            if np.max(np.abs(val - prev)) <= 1e-12 * scale:
                return val
        prev = val
        step *= 0.5
    return prev


def apply_robin(t, H, x, k=0, side=1, alpha=1.0, route="reduction", cfg=DEFAULT_QUADRATURE):
    """Robin semigroup: whole-line evolution of the even part plus a
    half-line Robin evolution of the odd part, reassembled as
    ``T g(x) = T_t g_even(x) + sign(x) w(|x|)``.

    ``route`` is ``"reduction"`` (normative), ``"direct"`` (printed double
    integral) or ``"both"``, which evaluates both and raises
    :class:`ConsistencyError` when they differ by more than ``1e-6`` relative
    to ``max(1, |value|)``.
    """
    if route not in ROUTES:
        raise ValueError(f"route must be one of {ROUTES}")
    if t == 0:
        return H.eval(x, k, side)
    xs, scalar = _as_array(x)
    even, _, _ = _robin_parts(H)
    R, feat = _support(H, 0.0, cfg)
    ev = _halfline([(even, 1.0), (even, -1.0)], xs, t, k, cfg, R, feat)
    pos = _split(xs, side)
    r = np.abs(xs)
    # u(x) = sign(x) w(|x|) so u^(k)(x) = sign(x) (sign x)^k w^(k)(|x|)
    sgn = np.where(pos, 1.0, -1.0) * np.where(pos, 1.0, (-1.0) ** k)
    if route in ("reduction", "both"):
        w = _robin_odd_reduction(t, alpha, H, r, k, cfg)
    if route in ("direct", "both"):
        wd = _robin_odd_direct(t, alpha, H, r, k, cfg)
        if route == "direct":
            w = wd
        else:
            scale = np.maximum(1.0, np.abs(ev + sgn * w))
            gap = np.max(np.abs(w - wd) / scale)
            if gap > ROUTE_TOLERANCE:
                raise ConsistencyError(f"Robin routes disagree by {gap:.3e}")
    return _finish(ev + sgn * w, scalar)


# ---------------------------------------------------------------------------
# dispatch


def semigroup_value(regime, t, H, x, k=0, side=1, cfg=DEFAULT_QUADRATURE):
    """``d^k/dx^k (T_t^beta H)(x)`` for the regime's semigroup."""
    if t < 0:
        raise ValueError("semigroup time must be >= 0")
    kind = regime.kind
    if kind == LINE:
        return apply_line(t, H, x, k, side, cfg)
    if kind == NEUMANN:
        return apply_neumann(t, H, x, k, side, cfg)
    return apply_robin(t, H, x, k, side, regime.alpha, "reduction", cfg)


_MEMO_SIZE = 8


class SemigroupBranch(Branch):
    """One side of ``T_t^beta H``, evaluated lazily.

    Recent evaluations are memoised: the Robin evaluator asks for the same
    nodes several times while splitting into even and odd parts.
    """

    def __init__(self, regime, t, H, side, cfg=DEFAULT_QUADRATURE):
        self.regime, self.t, self.H, self.side, self.cfg = regime, float(t), H, side, cfg
        self.max_order = DEFAULT_KMAX
        self.radius = H.radius + cfg.truncation_sigmas * math.sqrt(2.0 * self.t)
        self.feature = math.sqrt(H.feature**2 + 2.0 * self.t)

        self._memo = OrderedDict()

    def deriv(self, x, k):
        x = np.asarray(x, dtype=float)
        key = (k, x.shape, x.tobytes())
        hit = self._memo.get(key)
        if hit is not None:
            self._memo.move_to_end(key)
            return hit
        val = semigroup_value(self.regime, self.t, self.H, x, k, self.side, self.cfg)
        self._memo[key] = val
        if len(self._memo) > _MEMO_SIZE:
            self._memo.popitem(last=False)
        return val


def evolve(regime, t, H, cfg=DEFAULT_QUADRATURE):
    """``T_t^beta H`` as a lazily evaluated :class:`TestFunction`."""
    if t < 0:
        raise ValueError("semigroup time must be >= 0")
    if t == 0:
        return H
    fam = {"tag": "evolved", "regime": regime.to_record(), "t": float(t), "of": H.family}
    return TestFunction(
        SemigroupBranch(regime, t, H, -1, cfg),
        SemigroupBranch(regime, t, H, 1, cfg),
        DEFAULT_KMAX,
        fam,
    )


@dataclass(frozen=True)
class SampledFunction:
    """``T_t^beta H`` (order ``k``) on a grid plus its one-sided values at 0."""

    t: float
    k: int
    x: np.ndarray
    values: np.ndarray
    value_0p: float
    value_0m: float

    def to_records(self):
        rows = [{"x": float(a), "one_sided": "", "k": self.k, "value": float(v)} for a, v in zip(self.x, self.values)]
        rows.append({"x": 0.0, "one_sided": "+", "k": self.k, "value": self.value_0p})
        rows.append({"x": 0.0, "one_sided": "-", "k": self.k, "value": self.value_0m})
        return rows


def semigroup_apply(regime, t, H, grid, k=0, cfg=DEFAULT_QUADRATURE):
    """Sample ``d^k T_t^beta H`` on ``grid`` and at ``0+``/``0-``."""
    grid = np.asarray(grid, dtype=float)
    F = evolve(regime, t, H, cfg)
    vals = np.asarray(F.eval(grid, k))
    p = float(F.eval(0.0, k, 1))
    m = float(F.eval(0.0, k, -1))
    return SampledFunction(float(t), int(k), grid, vals, p, m)


# ---------------------------------------------------------------------------
# generator expansion and continuity in time


DEFAULT_RESIDUAL_NORMS = (SeminormIndex(0, 0), SeminormIndex(1, 2), SeminormIndex(2, 2))


def generator_residual(regime, t, eps, H, norms=DEFAULT_RESIDUAL_NORMS, cfg=DEFAULT_QUADRATURE):
    """``max ||(T_{t+eps} H - T_t H)/eps - Delta T_t H||_{k,l}`` over ``norms``."""
    if eps <= 0 or t < 0:
        raise ValueError("need eps > 0 and t >= 0")
    Tt = evolve(regime, t, H, cfg)
    Tte = evolve(regime, t + eps, H, cfg)
    D = (Tte - Tt) * (1.0 / eps) - laplace_beta(Tt)
    ks = {n[0] for n in norms}
    ls = {n[1] for n in norms}
    table = seminorm_table(D, ks, ls)
    return max(table[SeminormIndex(*n)] for n in norms)


def continuity_modulus(regime, H, t, s, trunc=6, cfg=DEFAULT_QUADRATURE):
    """Metric distance between ``T_t H`` and ``T_s H``."""
    if t < 0 or s < 0:
        raise ValueError("times must be >= 0")
    if t == s:
        return 0.0
    return metric(evolve(regime, t, H, cfg), evolve(regime, s, H, cfg), trunc)


def gradnorm(regime, t, H, cfg=DEFAULT_QUADRATURE):
    """``||grad T_t H||^2`` in L2_beta (with the atom at 0 in the Robin regime)."""
    G = grad_beta(evolve(regime, t, H, cfg))
    R = G.radius
    step = max(min(G.feature, 1.0), 0.05)
    edges = np.linspace(0.0, R, int(math.ceil(R / step)) + 1)

    def sq(y):
        return np.asarray(G.eval(y)) ** 2 + np.asarray(G.eval(-y)) ** 2

    total = float(integrate(sq, 0.0, R, cfg, breakpoints=edges))
    if regime.kind == ROBIN:
        total += float(G.eval(0.0, 0, 1)) ** 2 / regime.alpha**2
    return total


def gradnorm_curve(regime, H, times, cfg=DEFAULT_QUADRATURE):
    """``f(t) = ||grad_beta T_t H||^2_{2,beta}`` at each of ``times``."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be sorted and non-negative")
    return np.array([gradnorm(regime, t, H, cfg) for t in times])


def observed_order(steps, values):
    """Least-squares slope of ``log values`` against ``log steps``."""
    steps = np.log(np.asarray(steps, dtype=float))
    values = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(steps, values, 1)[0])


def generator_order(regime, t, eps_seq, H, norms=DEFAULT_RESIDUAL_NORMS, cfg=DEFAULT_QUADRATURE):
    """Residuals of :func:`generator_residual` over ``eps_seq`` and their observed order."""
    res = [generator_residual(regime, t, e, H, norms, cfg) for e in eps_seq]
    return res, observed_order(eps_seq, res)


def continuity_ratio(regime, H, t, h, trunc=6, cfg=DEFAULT_QUADRATURE):
    """``d(T_t H, T_{t+h} H) / d(T_t H, T_{t+h/2} H)``; about 2 for Lipschitz-in-time orbits."""
    return continuity_modulus(regime, H, t, t + h, trunc, cfg) / continuity_modulus(regime, H, t, t + h / 2, trunc, cfg)


def gradnorm_jump_ratio(regime, H, horizon, dt, cfg=DEFAULT_QUADRATURE):
    """Max adjacent jump of :func:`gradnorm_curve` at mesh ``dt`` over that at ``dt/2``."""
    jumps = []
    for step in (dt, dt / 2):
        m = int(round(horizon / step))
        curve = gradnorm_curve(regime, H, np.linspace(0.0, horizon, m + 1), cfg)
        jumps.append(np.abs(np.diff(curve)).max())
    return float(jumps[0] / jumps[1])


def l2_pairing(F, G, cfg=DEFAULT_QUADRATURE):
    """Plain ``int F G`` over the line, split at 0."""
    R = max(F.radius, G.radius)
    step = max(min(F.feature, G.feature, 1.0), 0.02)
    edges = np.linspace(0.0, R, int(math.ceil(R / step)) + 1)

    def prod(y):
        return np.asarray(F.eval(y)) * np.asarray(G.eval(y)) + np.asarray(F.eval(-y)) * np.asarray(G.eval(-y))

    return float(integrate(prod, 0.0, R, cfg, breakpoints=edges))


__all__ = [
    "ConsistencyError",
    "SampledFunction",
    "SemigroupBranch",
    "apply_dirichlet",
    "apply_line",
    "apply_neumann",
    "apply_robin",
    "continuity_modulus",
    "continuity_ratio",
    "evolve",
    "generator_order",
    "generator_residual",
    "gradnorm",
    "gradnorm_curve",
    "gradnorm_jump_ratio",
    "heat_kernel",
    "l2_pairing",
    "observed_order",
    "robin_tail_kernel",
    "semigroup_apply",
    "semigroup_value",
]
