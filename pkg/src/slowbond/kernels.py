"""Heat kernel, its space derivatives, and the panel quadrature engine.

The heat kernel here is ``phi_t(x) = exp(-x**2 / (4 t)) / sqrt(4 pi t)``, i.e.
the fundamental solution of ``u_t = u_xx`` (variance ``2 t``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial.polynomial import polyval


class DomainError(ValueError):
    """Raised for kernel evaluation outside ``t > 0``."""


class AccuracyError(RuntimeError):
    """Adaptive quadrature hit its refinement limit.

    The best available estimate and its error estimate are attached so
    callers can decide whether the result is still usable.
    """

    def __init__(self, message, estimate, error):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


def _check_time(t):
    if not t > 0:
        raise DomainError(f"heat kernel needs t > 0, got {t!r}")


def heat_kernel(t, x):
    """Gaussian heat kernel ``phi_t(x)``; vectorised in ``x``."""
    _check_time(t)
    x = np.asarray(x, dtype=float)
    return np.exp(-x * x / (4.0 * t)) / math.sqrt(4.0 * math.pi * t)


@lru_cache(maxsize=None)
def _scaled_poly(n):
    # p_0 = 1, p_{n+1}(s) = p_n'(s) - 2 s p_n(s); p_n = (-1)^n * physicists' H_n
    p = Polynomial([1.0])
    s = Polynomial([0.0, 1.0])
    for _ in range(n):
        p = p.deriv() - 2.0 * s * p
    return p


@dataclass(frozen=True)
class KernelDerivative:
    """``d^n/dx^n phi_t(x) = q_n(x; t) phi_t(x)``.

    ``q_n`` satisfies ``q_0 = 1`` and ``q_{n+1} = q_n' - x/(2t) q_n``. It is
    stored through the scaled variable ``s = x / (2 sqrt(t))``, in which
    ``q_n(x) = (2 sqrt(t))**(-n) p_n(s)`` with integer coefficients.
    """

    order: int

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("derivative order must be >= 0")

    @property
    def scaled(self):
        return _scaled_poly(self.order)

    def coefficients(self, t):
        """Monomial coefficients of ``q_n`` in ``x`` (lowest degree first)."""
        _check_time(t)
        c = self.scaled.coef.copy()
        scale = 1.0 / (2.0 * math.sqrt(t))
        c = c * scale ** np.arange(c.size) * scale**self.order
        return c

    def poly(self, t):
        return Polynomial(self.coefficients(t))

    def __call__(self, t, x):
        _check_time(t)
        x = np.asarray(x, dtype=float)
        r = 2.0 * math.sqrt(t)
        return polyval(x / r, self.scaled.coef) * r ** (-self.order) * heat_kernel(t, x)


def heat_kernel_deriv(t, x, n):
    """n-th space derivative of the heat kernel via the polynomial recurrence."""
    if n < 0:
        raise ValueError("derivative order must be >= 0")
    return KernelDerivative(int(n))(t, x)


def heat_kernel_derivs(t, x, nmax):
    """Orders ``0..nmax`` of the kernel derivative, sharing one exponential."""
    _check_time(t)
    x = np.asarray(x, dtype=float)
    r = 2.0 * math.sqrt(t)
    s = x / r
    base = np.exp(-s * s) / math.sqrt(4.0 * math.pi * t)
    return [polyval(s, _scaled_poly(n).coef) * r ** (-n) * base for n in range(nmax + 1)]


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances for :func:`integrate`.

    ``truncation_sigmas`` is the half-width, in units of the kernel standard
    deviation ``sqrt(2 t)``, beyond which Gaussian-weighted integrands are
    treated as zero.
    """

    abs_tol: float = 1e-11
    rel_tol: float = 1e-10
    truncation_sigmas: float = 12.0
    max_refinement_depth: int = 30

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("quadrature tolerances must be positive")
        if self.truncation_sigmas < 8:
            raise ValueError("truncation_sigmas must be >= 8")
        if self.max_refinement_depth < 1:
            raise ValueError("max_refinement_depth must be >= 1")


DEFAULT_QUADRATURE = QuadratureConfig()

# 21-point Gauss-Kronrod rule with its embedded 10-point Gauss rule
_XGK = np.array([
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.0,
])
_WGK = np.array([
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077208814748588, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
])
_WG = np.array([
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KRONROD_W = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GAUSS_W = np.zeros(21)
_GAUSS_W[1:10:2] = _WG
_GAUSS_W[11:20:2] = _WG[::-1]
_N = _NODES.size
# panels whose error estimate is at round-off level relative to |f| are final
_ROUNDOFF = 50.0 * np.finfo(float).eps


def _panel_nodes(a, b):
    mid = 0.5 * (a + b)[:, None]
    half = 0.5 * (b - a)[:, None]
    return mid + half * _NODES, half


def integrate(f, a, b=None, cfg=DEFAULT_QUADRATURE, *, center=0.0, scale=1.0, breakpoints=None):
    """Adaptive composite Gauss-Kronrod quadrature of a vector-valued integrand.

    Parameters
    ----------
    f : callable
        ``f(y)`` takes a 1-D array of nodes of length ``m`` and returns an
        array of shape ``(m, *shape)``. All panels of one refinement sweep are
        evaluated in a single call.
    a, b : float
        Integration limits; infinite limits are truncated at
        ``center -/+ cfg.truncation_sigmas * scale``. ``b=None`` with a tuple
        ``a`` is accepted for ``integrate(f, (lo, hi))``.
    breakpoints : sequence of float, optional
        Initial panel boundaries inside ``(a, b)``; use them to resolve
        features narrower than the domain. Each panel uses the 21-point
        Gauss-Kronrod rule; its difference from the embedded 10-point Gauss
        rule is the panel error estimate.

    Returns
    -------
    ndarray of shape ``shape`` (a float for scalar integrands).

    Notes
    -----
    Each component of a panel is accepted once its error estimate is below
    the panel's share (by width) of ``max(abs_tol, rel_tol * integral of |f|)``;
    only components that fail are refined further. The
    relative part is measured against ``|f|`` rather than ``f`` so integrals
    that cancel to zero do not chase round-off. A panel is also accepted when
    its error estimate is within ``50 eps`` of its integral of ``|f|``.
    """
    if b is None:
        a, b = a
    lo, hi = float(a), float(b)
    if math.isinf(lo):
        lo = center - cfg.truncation_sigmas * scale
    if math.isinf(hi):
        hi = center + cfg.truncation_sigmas * scale
    if hi < lo:
        return -integrate(f, hi, lo, cfg, breakpoints=breakpoints)
    edges = [lo, hi]
    if breakpoints is not None:
        inner = [float(p) for p in np.ravel(breakpoints) if lo < p < hi]
        edges = sorted(set([lo, hi] + inner))
    edges = np.asarray(edges)
    total_width = hi - lo
    if total_width == 0:
        probe = np.asarray(f(np.array([lo])))
        return np.zeros(probe.shape[1:])[()]

    pa, pb = edges[:-1], edges[1:]
    active = None  # (panel, component) pairs still being refined
    for _depth in range(cfg.max_refinement_depth + 1):
        nodes, half = _panel_nodes(pa, pb)
        npan = pa.size
        vals = np.asarray(f(nodes.ravel()), dtype=float)
        tail = vals.shape[1:]
        v = vals.reshape(npan, _N, -1)
        h = half.reshape(npan, 1)
        ql = np.tensordot(v, _GAUSS_W, axes=([1], [0])) * h
        qh = np.tensordot(v, _KRONROD_W, axes=([1], [0])) * h
        qabs = np.tensordot(np.abs(v), _KRONROD_W, axes=([1], [0])) * h
        err = np.abs(qh - ql)
        if active is None:
            active = np.ones(qh.shape, dtype=bool)
            accepted = np.zeros(qh.shape[1])
            accepted_abs = np.zeros(qh.shape[1])
        running_abs = accepted_abs + np.sum(qabs * active, axis=0)
        tol = np.maximum(cfg.abs_tol, cfg.rel_tol * running_abs)
        share = ((pb - pa) / total_width)[:, None]
        ok = (err <= tol * share) | (err <= _ROUNDOFF * qabs)
        done = active & ok
        accepted = accepted + np.sum(qh * done, axis=0)
        accepted_abs = accepted_abs + np.sum(qabs * done, axis=0)
        active = active & ~ok
        split = active.any(axis=1)
        if not split.any():
            return accepted.reshape(tail)[()]
        if _depth == cfg.max_refinement_depth:
            break
        bad_a, bad_b = pa[split], pb[split]
        mid = 0.5 * (bad_a + bad_b)
        pa = np.concatenate([bad_a, mid])
        pb = np.concatenate([mid, bad_b])
        active = np.concatenate([active[split], active[split]])
    best = (accepted + np.sum(qh * active, axis=0)).reshape(tail)
    best_err = np.sum(err * active, axis=0).reshape(tail)
    raise AccuracyError(
        f"quadrature did not converge within {cfg.max_refinement_depth} refinements",
        best[()],
        best_err[()],
    )
