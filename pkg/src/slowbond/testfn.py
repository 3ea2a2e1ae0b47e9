"""Two-branch test functions, their seminorms, and the regime-dependent classes.

A :class:`TestFunction` is a pair of smooth branches glued at the origin,
with the value at 0 taken from the right branch. Each branch knows its own
derivatives analytically (closed-form Gaussian-polynomial families) or through
the semigroup evaluators (heat-smoothed functions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.polynomial import Polynomial

from .kernels import DEFAULT_QUADRATURE, integrate

DEFAULT_KMAX = 8


class OrderUnsupportedError(ValueError):
    """Requested derivative order exceeds what the function carries."""


class DivergentSeminormError(ArithmeticError):
    """A weighted sup did not settle as the truncation radius grew."""


class DivergentNormError(ArithmeticError):
    """The squared integral of a function is not finite."""


class FamilyError(ValueError):
    """Invalid parameters for a built-in test-function family."""


# ---------------------------------------------------------------------------
# regimes


LINE, ROBIN, NEUMANN = "line", "robin", "neumann"


@dataclass(frozen=True)
class BetaRegime:
    """Which hydrodynamic regime governs operators and semigroups.

    ``kind`` is derived from ``beta``: line for ``beta < 1``, robin for
    ``beta == 1`` and neumann for ``beta > 1`` (``math.inf`` included).
    ``alpha`` is the Robin coupling; it also enters the L2 norm at ``beta == 1``.
    """

    beta: float
    alpha: float = 1.0

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta!r}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be a positive finite number, got {self.alpha!r}")

    @property
    def kind(self):
        if self.beta < 1:
            return LINE
        if self.beta == 1:
            return ROBIN
        return NEUMANN

    @classmethod
    def line(cls, beta=0.5):
        return cls(beta)

    @classmethod
    def robin(cls, alpha=1.0):
        return cls(1.0, alpha)

    @classmethod
    def neumann(cls, beta=math.inf, alpha=1.0):
        return cls(beta, alpha)

    @classmethod
    def parse(cls, name, beta=None, alpha=1.0):
        """Build from a regime name (``line``/``robin``/``neumann``) or an explicit beta."""
        if beta is not None:
            reg = cls(float(beta), float(alpha))
            if name is not None and reg.kind != name:
                raise ValueError(f"beta={beta} is in the {reg.kind} regime, not {name}")
            return reg
        defaults = {LINE: 0.5, ROBIN: 1.0, NEUMANN: math.inf}
        if name not in defaults:
            raise ValueError(f"unknown regime {name!r}")
        return cls(defaults[name], float(alpha))

    def same_class(self, other):
        """True when both regimes define the same space and semigroup."""
        if self.kind != other.kind:
            return False
        return self.kind != ROBIN or self.alpha == other.alpha

    def to_record(self):
        beta = "inf" if math.isinf(self.beta) else self.beta
        return {"kind": self.kind, "beta": beta, "alpha": self.alpha}


# ---------------------------------------------------------------------------
# branches


class Branch:
    """Smooth function on one closed half-line, with derivative access."""

    #: order up to which ``deriv`` is meaningful
    max_order = DEFAULT_KMAX
    #: |x| beyond which the branch and its derivatives are negligible
    radius = 10.0
    #: smallest length scale of the branch (sets seminorm grid spacing)
    feature = 1.0

    def deriv(self, x, k):
        raise NotImplementedError


class GaussPolyBranch(Branch):
    """``p(x) * exp(-a (x - c)^2)`` with derivatives by polynomial recurrence."""

    def __init__(self, coef, a=1.0, center=0.0, max_order=DEFAULT_KMAX):
        if not a > 0:
            raise FamilyError(f"Gaussian rate must be positive, got {a!r}")
        self.coef = tuple(float(c) for c in coef) or (0.0,)
        self.a = float(a)
        self.center = float(center)
        self.max_order = max_order
        p = Polynomial(self.coef)
        shift = Polynomial([-self.center, 1.0])
        self._polys = [p]
        for _ in range(max_order + 2):
            p = p.deriv() - 2.0 * self.a * shift * p
            self._polys.append(p)
        deg = len(self.coef) - 1
        self.radius = abs(self.center) + math.sqrt((50.0 + 2.0 * (deg + max_order)) / self.a)
        self.feature = 1.0 / math.sqrt(self.a)

    def deriv(self, x, k):
        x = np.asarray(x, dtype=float)
        return self._polys[k](x) * np.exp(-self.a * (x - self.center) ** 2)


class ZeroBranch(Branch):
    radius = 1.0

    def deriv(self, x, k):
        return np.zeros(np.shape(x))


class CombinationBranch(Branch):
    """Linear combination of branches."""

    def __init__(self, terms):
        self.terms = tuple((float(c), b) for c, b in terms)
        self.max_order = min(b.max_order for _, b in self.terms)
        self.radius = max(b.radius for _, b in self.terms)
        self.feature = min(b.feature for _, b in self.terms)

    def deriv(self, x, k):
        out = np.zeros(np.shape(x))
        for c, b in self.terms:
            if c != 0.0:
                out = out + c * b.deriv(x, k)
        return out


class ShiftedBranch(Branch):
    """Derivative of a branch: ``deriv(x, k)`` returns the base's order ``k + m``."""

    def __init__(self, base, m):
        self.base = base
        self.m = m
        self.max_order = base.max_order - m
        self.radius = base.radius
        self.feature = base.feature

    def deriv(self, x, k):
        return self.base.deriv(x, k + self.m)


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Candidate element of S_beta: two smooth branches, right-continuous at 0.

    Parameters
    ----------
    left, right : Branch
        Branches on ``(-inf, 0]`` and ``[0, inf)``.
    k_max : int
        Highest derivative order the function supports.
    family : dict
        Serialisable descriptor of the constructing family.
    """

    __test__ = False  # keep pytest from collecting this class

    left: Branch
    right: Branch
    k_max: int = DEFAULT_KMAX
    family: dict = field(default_factory=lambda: {"tag": "custom"})

    def __post_init__(self):
        cap = min(self.left.max_order, self.right.max_order)
        if self.k_max > cap:
            object.__setattr__(self, "k_max", cap)

    @classmethod
    def smooth(cls, branch, k_max=DEFAULT_KMAX, family=None):
        """Function whose two branches are the same globally smooth function."""
        return cls(branch, branch, k_max, family or {"tag": "custom"})

    @property
    def radius(self):
        return max(self.left.radius, self.right.radius)

    @property
    def feature(self):
        return min(self.left.feature, self.right.feature)

    def eval(self, x, k=0, side=1):
        """``d^k H / du^k`` at ``x``; at ``x == 0`` the ``side`` flag picks 0+ or 0-."""
        if k < 0 or k > self.k_max:
            raise OrderUnsupportedError(f"derivative order {k} not in [0, {self.k_max}]")
        x = np.asarray(x, dtype=float)
        right = (x > 0) | ((x == 0) & (side > 0))
        out = np.empty(x.shape)
        if right.any():
            out[right] = self.right.deriv(x[right], k)
        if (~right).any():
            out[~right] = self.left.deriv(x[~right], k)
        return out[()] if out.ndim == 0 else out

    __call__ = eval

    def one_sided(self, k):
        """``(d^k H(0+), d^k H(0-))``."""
        return float(self.eval(0.0, k, 1)), float(self.eval(0.0, k, -1))

    # linear structure -------------------------------------------------------

    def _combine(self, other, c_self, c_other):
        left = CombinationBranch([(c_self, self.left), (c_other, other.left)])
        right = CombinationBranch([(c_self, self.right), (c_other, other.right)])
        fam = {"tag": "combination", "terms": [[c_self, self.family], [c_other, other.family]]}
        return TestFunction(left, right, min(self.k_max, other.k_max), fam)

    def __add__(self, other):
        return self._combine(other, 1.0, 1.0)

    def __sub__(self, other):
        return self._combine(other, 1.0, -1.0)

    def __mul__(self, c):
        c = float(c)
        fam = {"tag": "combination", "terms": [[c, self.family]]}
        return TestFunction(
            CombinationBranch([(c, self.left)]),
            CombinationBranch([(c, self.right)]),
            self.k_max,
            fam,
        )

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def to_record(self):
        return dict(self.family)


def evaluate(H, x, k=0, side=1):
    """``d^k H/du^k (x)``; the 0+ value is returned at the origin unless ``side < 0``."""
    return H.eval(x, k, side)


ZERO = TestFunction(ZeroBranch(), ZeroBranch(), DEFAULT_KMAX, {"tag": "zero"})


# ---------------------------------------------------------------------------
# seminorms and metric


class SeminormIndex(NamedTuple):
    k: int
    l: int  # noqa: E741


_GEO_POINTS = 60
_ZOOM_POINTS = 21
_ZOOM_ROUNDS = 4


def _side_grid(R, h):
    geo = np.geomspace(1e-6, min(1.0, R), _GEO_POINTS)
    uni = np.arange(h, R + 0.5 * h, h)
    return np.unique(np.concatenate([geo, uni]))


def _weight(u, l):  # noqa: E741
    # l = 0 is the plain sup norm
    return 1.0 + u**l if l > 0 else np.ones_like(u)


def _grid_step(H):
    return min(0.02, H.feature / 25.0)


def seminorm_table(H, ks, ls, *, rel_tail=1e-12, r_max=1024.0):
    """Seminorms ``||H||_{k,l} = sup_{u != 0} |(1 + |u|^l) H^(k)(u)|`` for all pairs.

    The weight is read as ``1`` when ``l = 0``, so ``||H||_{k,0}`` is the sup norm.

    The sup is taken over a grid on each side (geometric on ``[1e-6, 1]``
    plus uniform spacing ``min(0.02, feature/25)`` up to the radius ``R``),
    together with the one-sided limits at 0, then refined by repeated
    21-point zooms around the best grid point. ``R`` starts at the
    function's radius and doubles until the weighted values near ``R`` are
    below ``rel_tail`` times the running sup.

    Returns
    -------
    dict mapping ``SeminormIndex`` to float.
    """
    ks = sorted(set(int(k) for k in ks))
    ls = sorted(set(int(l) for l in ls))  # noqa: E741
    h = _grid_step(H)
    out = {}
    for k in ks:
        if k > H.k_max:
            raise OrderUnsupportedError(f"seminorm order {k} exceeds k_max={H.k_max}")
        R = max(H.radius, 1.0)
        prev = None
        while True:
            u = _side_grid(R, h)
            vr = np.asarray(H.eval(u, k))
            vl = np.asarray(H.eval(-u, k))
            z = np.abs(np.asarray(H.one_sided(k)))
            if not (np.all(np.isfinite(vr)) and np.all(np.isfinite(vl))):
                raise DivergentSeminormError(f"non-finite derivative values for k={k}")
            sups = {}
            settled = True
            tail = u >= 0.9 * R
            for l in ls:  # noqa: E741
                w = _weight(u, l)
                s = max(np.max(w * np.abs(vr)), np.max(w * np.abs(vl)), z.max())
                sups[l] = s
                t = max(np.max((w * np.abs(vr))[tail]), np.max((w * np.abs(vl))[tail]))
                if t > rel_tail * s:
                    settled = False
            if settled:
                break
            if R >= r_max:
                if prev is not None and any(sups[l] > prev[l] * (1 + 1e-9) for l in ls):
                    raise DivergentSeminormError(
                        f"weighted sup still growing at radius {R} for k={k}"
                    )
                break
            prev = sups
            R *= 2.0
        refined = _refine(H, k, u, vr, vl, ls)
        for l in ls:  # noqa: E741
            out[SeminormIndex(k, l)] = max(sups[l], refined[l])
    return out


def _refine(H, k, u, vr, vl, ls):
    # zoom around the grid argmax on each side, batched over l and side
    brackets = []
    for l in ls:  # noqa: E741
        w = _weight(u, l)
        for sgn, v in ((1.0, vr), (-1.0, vl)):
            i = int(np.argmax(w * np.abs(v)))
            lo = u[i - 1] if i > 0 else 0.5 * u[0]
            hi = u[i + 1] if i + 1 < u.size else u[i]
            brackets.append([l, sgn, lo, hi, 0.0])
    for _ in range(_ZOOM_ROUNDS):
        pts = [np.linspace(b[2], b[3], _ZOOM_POINTS) for b in brackets]
        xs = np.concatenate([b[1] * p for b, p in zip(brackets, pts)])
        vals = np.abs(np.asarray(H.eval(xs, k))).reshape(len(brackets), _ZOOM_POINTS)
        for b, p, v in zip(brackets, pts, vals):
            wv = _weight(p, b[0]) * v
            j = int(np.argmax(wv))
            b[4] = max(b[4], float(wv[j]))
            step = p[1] - p[0]
            b[2], b[3] = max(p[j] - step, 0.5 * p[0]), p[j] + step
    return {l: max(b[4] for b in brackets if b[0] == l) for l in ls}  # noqa: E741


def seminorm(H, idx, **kwargs):
    """``||H||_{k,l}``; ``idx`` is a :class:`SeminormIndex` or ``(k, l)`` pair."""
    k, l = idx  # noqa: E741
    return seminorm_table(H, [k], [l], **kwargs)[SeminormIndex(k, l)]


def metric_terms(H, G, trunc=6):
    """``(d(H, G), tail_bound)`` for the truncated Frechet metric.

    ``d = sum_{k,l=1..trunc} 2^-(k+l) ||H - G||_{k,l}``; the tail bound is
    ``2 * 2^-trunc * max`` of the computed seminorms.
    """
    if trunc < 1:
        raise ValueError("trunc must be >= 1")
    if H.k_max < trunc or G.k_max < trunc:
        raise OrderUnsupportedError(f"metric truncation {trunc} exceeds k_max")
    D = H - G
    orders = range(1, trunc + 1)
    table = seminorm_table(D, orders, orders)
    value = 0.0
    for k in orders:
        for l in orders:  # noqa: E741
            value += 2.0 ** -(k + l) * table[SeminormIndex(k, l)]
    tail = 2.0 * 2.0**-trunc * max(table.values())
    return value, tail


def metric(H, G, trunc=6):
    """Truncated Frechet metric between two test functions."""
    return metric_terms(H, G, trunc)[0]


# ---------------------------------------------------------------------------
# L2_beta norm and the operators


def l2beta_norm(H, regime, cfg=DEFAULT_QUADRATURE):
    """``sqrt(int H^2 + 1{beta=1} H(0+)^2 / alpha^2)``."""
    R = H.radius
    edges = np.linspace(0.0, R, int(np.ceil(R / max(H.feature, 0.05))) + 1)

    def sq(y):
        return H.right.deriv(y, 0) ** 2 + H.left.deriv(-y, 0) ** 2

    total = float(integrate(sq, 0.0, R, cfg, breakpoints=edges))
    if not math.isfinite(total):
        raise DivergentNormError("square integral is not finite")
    tail = sq(np.array([R]))[0]
    if tail > 1e-20 * max(total, 1e-300) and tail > 1e-30:
        raise DivergentNormError(f"H^2 not negligible at radius {R}")
    if regime.kind == ROBIN:
        total += float(H.eval(0.0)) ** 2 / regime.alpha**2
    return math.sqrt(total)


def _derivative(H, m, tag):
    if H.k_max < m:
        raise OrderUnsupportedError(f"{tag} needs k_max >= {m}, have {H.k_max}")
    fam = {"tag": tag, "of": H.family}
    return TestFunction(ShiftedBranch(H.left, m), ShiftedBranch(H.right, m), H.k_max - m, fam)


def grad_beta(H):
    """First derivative with the 0+ convention at the origin."""
    return _derivative(H, 1, "grad")


def laplace_beta(H):
    """Second derivative with the 0+ convention at the origin."""
    return _derivative(H, 2, "laplace")


# ---------------------------------------------------------------------------
# membership


@dataclass(frozen=True)
class MembershipEntry:
    regime: str
    order: int
    residual: float
    passed: bool
    check: str

    def to_record(self):
        return {
            "regime": self.regime,
            "order": self.order,
            "check": self.check,
            "residual": self.residual,
            "pass": self.passed,
        }


@dataclass(frozen=True)
class MembershipReport:
    regime: str
    entries: tuple

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def failures(self):
        return [e for e in self.entries if not e.passed]

    def to_records(self):
        return [e.to_record() for e in self.entries]


def validate_membership(H, regime, max_k=2, tol=1e-8):
    """Check the boundary conditions that define S_beta, order by order.

    For ``k <= max_k`` the odd order ``o = 2k + 1`` is tested:

    * neumann: ``|H^(o)(0+)|`` and ``|H^(o)(0-)|`` vanish;
    * robin: ``H^(o)(0+) = H^(o)(0-) = alpha (H^(o-1)(0+) - H^(o-1)(0-))``;
    * line: all seminorms up to order ``o`` are finite and every derivative
      up to order ``o`` is continuous across 0.

    Residuals are divided by ``max(1, ||H||_{o,0})`` and compared with ``tol``.
    Failures are entries in the report, never exceptions.
    """
    if 2 * max_k + 1 > H.k_max:
        raise OrderUnsupportedError(f"max_k={max_k} needs k_max >= {2 * max_k + 1}")
    entries = []
    kind = regime.kind
    if kind == LINE:
        orders = range(0, 2 * max_k + 2)
        try:
            table = seminorm_table(H, orders, [0, 2])
        except DivergentSeminormError:
            return MembershipReport(kind, (MembershipEntry(kind, 0, math.inf, False, "finite"),))
        for j in orders:
            scale = max(1.0, table[SeminormIndex(j, 0)])
            p, m = H.one_sided(j)
            r = abs(p - m) / scale
            entries.append(MembershipEntry(kind, j, r, bool(r <= tol), "continuity"))
        return MembershipReport(kind, tuple(entries))

    odd = [2 * k + 1 for k in range(max_k + 1)]
    table = seminorm_table(H, odd, [0])
    for k, o in enumerate(odd):
        scale = max(1.0, table[SeminormIndex(o, 0)])
        dp, dm = H.one_sided(o)
        if kind == NEUMANN:
            r = max(abs(dp), abs(dm)) / scale
            check = "odd-derivative-vanishes"
        else:
            ep, em = H.one_sided(o - 1)
            r = max(abs(dp - dm), abs(dp - regime.alpha * (ep - em))) / scale
            check = "robin-coupling"
        entries.append(MembershipEntry(kind, k, r, bool(r <= tol), check))
    return MembershipReport(kind, tuple(entries))


# ---------------------------------------------------------------------------
# built-in families


def _gauss_poly(coef, a=1.0, center=0.0, scale=1.0):
    return GaussPolyBranch([scale * c for c in coef], a, center)


def hermite_gauss(poly=(1.0,), a=1.0, center=0.0):
    """Smooth ``p(x) exp(-a (x - center)^2)``."""
    if len(poly) == 0:
        raise FamilyError("empty polynomial")
    fam = {"tag": "hermite_gauss", "poly": list(map(float, poly)), "a": float(a), "center": float(center)}
    return TestFunction.smooth(_gauss_poly(poly, a, center), family=fam)


def heat_kernel_function(s):
    """The heat kernel ``phi_s`` as a smooth test function."""
    if not s > 0:
        raise FamilyError("heat kernel family needs s > 0")
    c = 1.0 / math.sqrt(4.0 * math.pi * s)
    fam = {"tag": "heat_kernel", "s": float(s)}
    return TestFunction.smooth(GaussPolyBranch([c], 1.0 / (4.0 * s)), family=fam)


def _even_branch(rpoly, a):
    # f(x^2) with f(r) = p(r) exp(-a r): a polynomial in x with only even powers
    coef = []
    for c in rpoly:
        coef.extend([float(c), 0.0])
    return GaussPolyBranch(coef[:-1] or [0.0], a)


def even_branches(right=(1.0,), a_right=1.0, left=None, a_left=None):
    """Branchwise ``H(x) = f(x^2)`` with ``f(r) = p(r) exp(-a r)``; jumps allowed."""
    left = right if left is None else left
    a_left = a_right if a_left is None else a_left
    if len(right) == 0 or len(left) == 0:
        raise FamilyError("empty polynomial")
    fam = {
        "tag": "even_branches",
        "right": list(map(float, right)),
        "a_right": float(a_right),
        "left": list(map(float, left)),
        "a_left": float(a_left),
    }
    return TestFunction(_even_branch(left, a_left), _even_branch(right, a_right), DEFAULT_KMAX, fam)


def robin_smoothed(seed, alpha, s=0.05):
    """Robin-class function obtained by running the Robin semigroup on ``seed``."""
    from .semigroups import evolve

    if not s > 0:
        raise FamilyError("smoothing time must be positive")
    H = evolve(BetaRegime.robin(alpha), s, seed)
    fam = {"tag": "robin_smoothed", "alpha": float(alpha), "s": float(s), "seed": seed.family}
    return TestFunction(H.left, H.right, H.k_max, fam)


def builtin_family(regime, **params):
    """Construct a family member appropriate to ``regime``.

    line: ``poly``, ``a``, ``center`` (Hermite-Gaussian) or ``s`` (heat kernel);
    neumann: ``right``, ``a_right``, ``left``, ``a_left`` (even branches);
    robin: ``seed`` (TestFunction or record), ``s`` (smoothing time).
    """
    kind = regime.kind
    try:
        if kind == LINE:
            if "s" in params:
                return heat_kernel_function(params["s"])
            return hermite_gauss(**params)
        if kind == NEUMANN:
            return even_branches(**params)
        seed = params.get("seed", hermite_gauss((0.0, 1.0)))
        if isinstance(seed, dict):
            seed = from_record(seed)
        return robin_smoothed(seed, regime.alpha, params.get("s", 0.05))
    except TypeError as exc:
        raise FamilyError(str(exc)) from None


def from_record(rec):
    """Rebuild a test function from its family descriptor."""
    tag = rec.get("tag")
    if tag == "hermite_gauss":
        return hermite_gauss(rec["poly"], rec.get("a", 1.0), rec.get("center", 0.0))
    if tag == "heat_kernel":
        return heat_kernel_function(rec["s"])
    if tag == "even_branches":
        return even_branches(rec["right"], rec.get("a_right", 1.0), rec.get("left"), rec.get("a_left"))
    if tag == "robin_smoothed":
        return robin_smoothed(from_record(rec["seed"]), rec["alpha"], rec.get("s", 0.05))
    if tag == "zero":
        return ZERO
    if tag == "combination":
        terms = [c * from_record(r) for c, r in rec["terms"]]
        out = terms[0]
        for t in terms[1:]:
            out = out + t
        return out
    if tag == "evolved":
        from .semigroups import evolve

        reg = rec["regime"]
        beta = math.inf if reg["beta"] == "inf" else float(reg["beta"])
        return evolve(BetaRegime(beta, float(reg["alpha"])), float(rec["t"]), from_record(rec["of"]))
    if tag in ("grad", "laplace"):
        base = from_record(rec["of"])
        return grad_beta(base) if tag == "grad" else laplace_beta(base)
    raise FamilyError(f"cannot rebuild family {tag!r}")


def default_battery(regime):
    """Named test functions belonging to the regime's class."""
    kind = regime.kind
    if kind == LINE:
        return {
            "gauss": hermite_gauss((1.0,)),
            "x_gauss": hermite_gauss((0.0, 1.0)),
            "hermite2": hermite_gauss((-2.0, 0.0, 4.0)),
            "mixed": hermite_gauss((1.0, 1.0, 0.0, 0.5), a=0.5),
        }
    if kind == NEUMANN:
        return {
            "gauss": even_branches((1.0,)),
            "jump": even_branches((1.0, 1.0), 1.0, (0.5,), 2.0),
            "plateau": even_branches((0.0, 1.0), 0.5),
        }
    return {
        "gauss": hermite_gauss((1.0,)),
        "odd_smoothed": robin_smoothed(hermite_gauss((0.0, 1.0)), regime.alpha),
        "mixed_smoothed": robin_smoothed(hermite_gauss((1.0, 1.0)), regime.alpha),
    }
