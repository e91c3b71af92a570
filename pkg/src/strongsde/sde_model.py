"""Scalar SDE specifications, the Lie gap, condition checks and localisation.

An equation ``dX = a(t, X) dt + b(t, X) dW`` is described by a single
coefficient function ``f(w, i, j, t, x, p)`` returning the partial derivative
``d^i/dt^i d^j/dx^j`` of the drift (``w=0``) or diffusion (``w=1``).  The same
function object is used by the vectorised numpy path and, compiled, by the
numba kernels.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _accel, _bump
from . import _catalog_coeffs as cc

__all__ = [
    "CapabilityError",
    "DomainError",
    "PreconditionError",
    "CoefficientField",
    "SdeSpec",
    "ConditionReport",
    "lie_gap",
    "lie_gap_values",
    "check_conditions",
    "localize",
    "catalog",
    "linear_sde",
    "CATALOG_NAMES",
    "THEOREM_IDS",
]

INF = math.inf
THEOREM_IDS = ("pointwise", "sup", "Lp")
CATALOG_NAMES = ("cir", "quintic", "sgn_drift", "sgn_drift_plain", "gbm",
                 "squared_bessel")

# Derivative orders (time, space) a theorem's smoothness hypothesis asks for.
_REQUIRED_ORDER = {"sup": (0, 1), "Lp": (0, 2), "pointwise": (1, 3)}


class CapabilityError(ValueError):
    """A requested derivative order is not provided by the coefficients."""


class DomainError(ValueError):
    """A point lies outside the declared smoothness domain."""


class PreconditionError(ValueError):
    """Inputs violate the documented preconditions of an operation."""


_compiled = {}


def _compile_cached(func):
    key = id(func)
    hit = _compiled.get(key)
    if hit is None or hit[0] is not func:
        hit = (func, _accel.njit(func))
        _compiled[key] = hit
    return hit[1]


class CoefficientField:
    """Drift and diffusion with their partial derivatives.

    Parameters
    ----------
    func : callable
        ``func(w, i, j, t, x, p)``; must be written with arithmetic and numpy
        ufuncs only so that it vectorises and compiles under numba.
    params : array_like
        Parameter vector handed to ``func`` as ``p``.
    max_order : dict
        ``{"a": (i, j), "b": (i, j)}``: every order ``(i', j')`` with
        ``i' <= i`` and ``j' <= j`` is available.
    smooth_domain : tuple
        ``((t_lo, t_hi), ((x_lo, x_hi), ...))``; open space intervals on which
        the declared derivatives are valid.
    autonomous : bool
        Coefficients do not depend on ``t``.
    builder : callable, optional
        ``builder(jitter)`` returning a function equivalent to ``func``.  Used
        for closures (localised fields) that must be rebuilt for numba.
    """

    def __init__(self, func, params=(), max_order=None, smooth_domain=None,
                 autonomous=True, builder=None):
        self.func = func
        p = np.ascontiguousarray(np.asarray(params, dtype=np.float64).ravel())
        p.setflags(write=False)
        self.params = p
        self.max_order = dict(max_order or {"a": (0, 0), "b": (0, 0)})
        if smooth_domain is None:
            smooth_domain = ((0.0, INF), ((-INF, INF),))
        self.smooth_domain = (tuple(smooth_domain[0]),
                              tuple(tuple(iv) for iv in smooth_domain[1]))
        self.autonomous = bool(autonomous)
        self._builder = builder
        self._nb = None

    @property
    def nb_func(self):
        """Numba-compiled counterpart of ``func``."""
        if self._nb is None:
            if self._builder is not None:
                self._nb = self._builder(_accel.njit)
            else:
                self._nb = _compile_cached(self.func)
        return self._nb

    def kernel_func(self, backend):
        return self.nb_func if backend == "numba" else self.func

    def has_order(self, which, i, j):
        mi, mj = self.max_order[which]
        return i <= mi and j <= mj

    def require(self, needed):
        """Raise CapabilityError unless all ``(which, i, j)`` are available."""
        missing = [n for n in needed if not self.has_order(*n)]
        if missing:
            raise CapabilityError(
                "missing derivative orders: "
                + ", ".join(f"{w}^({i},{j})" for w, i, j in missing))

    def eval(self, which, i, j, t, x):
        """Value of ``a^(i,j)`` (``which="a"``) or ``b^(i,j)`` at ``(t, x)``."""
        if which not in ("a", "b"):
            raise ValueError("which must be 'a' or 'b'")
        self.require([(which, i, j)])
        w = 0 if which == "a" else 1
        xs = np.asarray(x, dtype=np.float64)
        with np.errstate(all="ignore"):
            out = self.func(w, i, j, float(t), xs, self.params)
        out = np.asarray(out, dtype=np.float64)
        return float(out) if out.ndim == 0 else out

    def a(self, i, j, t, x):
        return self.eval("a", i, j, t, x)

    def b(self, i, j, t, x):
        return self.eval("b", i, j, t, x)

    def in_domain(self, t, x):
        (t_lo, t_hi), spans = self.smooth_domain
        if not (t_lo <= t <= t_hi):
            return False
        return any(lo < x < hi for lo, hi in spans)

    def space_interval_containing(self, lo, hi, closed=False):
        """Domain interval containing (lo, hi) (its closure if ``closed``)."""
        for dlo, dhi in self.smooth_domain[1]:
            if closed:
                ok = (dlo < lo or dlo == -INF == lo) and (
                    hi < dhi or dhi == INF == hi)
            else:
                ok = dlo <= lo and hi <= dhi
            if ok:
                return (dlo, dhi)
        return None


@dataclass(frozen=True)
class SdeSpec:
    """A scalar SDE on ``[0, T]``.

    ``initial(rng, size)`` draws random initial values when ``x0`` is None.
    ``exact_solution(x0, t, w)`` maps the initial value and Brownian value
    ``W(t)`` to ``X(t)`` for equations with a closed-form solution.
    ``reference`` names the scheme used to build reference solutions.
    """

    coeffs: CoefficientField
    T: float = 1.0
    x0: Optional[float] = None
    initial: Optional[Callable] = None
    exact_solution: Optional[Callable] = None
    name: str = "user"
    family: str = "user"
    reference: Optional[str] = None
    recipe: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if self.x0 is None and self.initial is None:
            raise ValueError("either x0 or an initial sampler is required")

    def initial_values(self, rng, size):
        if self.x0 is not None:
            return np.full(size, float(self.x0))
        return np.asarray(self.initial(rng, size), dtype=np.float64)

    def __reduce__(self):
        if self.recipe is None:
            raise TypeError(
                f"spec {self.name!r} has no recipe and cannot be pickled; "
                "run it with a single worker")
        return (_from_recipe, (self.recipe,))

    def with_horizon(self, T):
        recipe = None
        if self.recipe is not None:
            recipe = ("horizon", self.recipe, float(T))
        return dataclasses.replace(self, T=float(T), recipe=recipe)


def _from_recipe(recipe):
    kind = recipe[0]
    if kind == "catalog":
        return catalog(recipe[1], dict(recipe[2]))
    if kind == "localize":
        return localize(_from_recipe(recipe[1]), *recipe[2])
    if kind == "horizon":
        return _from_recipe(recipe[1]).with_horizon(recipe[2])
    if kind == "linear":
        return linear_sde(*recipe[1])
    raise ValueError(f"unknown recipe {kind!r}")


def lie_gap_values(coeffs, t, x):
    """Vectorised Lie gap without domain or capability checks."""
    f = coeffs.func
    p = coeffs.params
    with np.errstate(all="ignore"):
        a = f(0, 0, 0, t, x, p)
        a1 = f(0, 0, 1, t, x, p)
        b = f(1, 0, 0, t, x, p)
        bt = f(1, 1, 0, t, x, p)
        b1 = f(1, 0, 1, t, x, p)
        b2 = f(1, 0, 2, t, x, p)
        return a1 * b - bt - a * b1 - 0.5 * b * b * b2


_GAP_ORDERS = [("a", 0, 1), ("b", 1, 0), ("b", 0, 1), ("b", 0, 2)]


def lie_gap(spec: SdeSpec, t: float, x: float) -> float:
    """``a^(0,1) b - b^(1,0) - a b^(0,1) - b^2 b^(0,2) / 2`` at ``(t, x)``."""
    c = spec.coeffs
    c.require(_GAP_ORDERS)
    if not (0.0 <= t <= spec.T) or not c.in_domain(t, x):
        raise DomainError(f"({t}, {x}) is outside the smoothness domain")
    return float(lie_gap_values(c, float(t), np.float64(x)))


@dataclass(frozen=True)
class ConditionReport:
    theorem_id: str
    interval: tuple
    t0: float
    b_nonvanishing: bool
    b_min: float
    lie_gap_nonvanishing: Optional[bool]
    lie_gap_min: Optional[float]
    smoothness_declared: bool
    verdict: str
    grid_size: int = 1024
    threshold: float = 1e-12
    spec_name: str = ""

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["interval"] = [float(v) for v in self.interval]
        return d


def check_conditions(spec: SdeSpec, theorem_id: str, I, t0: float = 0.0,
                     grid_size: int = 1024, threshold: float = 1e-12):
    """Grid-based check of a theorem's hypotheses on ``[t0, T] x I``.

    The pointwise-error theorem needs a non-vanishing diffusion and Lie gap;
    the sup- and Lp-error theorems only need a non-vanishing diffusion.
    Minima over the grid are returned as witnesses.
    """
    if theorem_id not in THEOREM_IDS:
        raise ValueError(f"theorem_id must be one of {THEOREM_IDS}")
    lo, hi = float(I[0]), float(I[1])
    if not (lo < hi) or not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError(f"interval must be non-empty and bounded, got {I}")
    if not (0.0 <= t0 < spec.T):
        raise ValueError(f"t0 must lie in [0, T), got {t0}")
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")

    c = spec.coeffs
    xs = lo + (hi - lo) * np.arange(1, grid_size + 1) / (grid_size + 1)
    if c.autonomous:
        ts = [t0]
    else:
        ts = np.linspace(t0, spec.T, 17)
    with np.errstate(all="ignore"):
        b_min = min(float(np.min(np.abs(c.b(0, 0, t, xs)))) for t in ts)
    b_ok = bool(np.isfinite(b_min) and b_min > threshold)

    need_i, need_j = _REQUIRED_ORDER[theorem_id]
    smooth = (c.has_order("a", need_i, need_j)
              and c.has_order("b", need_i, need_j)
              and c.space_interval_containing(lo, hi) is not None
              and c.smooth_domain[0][0] <= t0
              and spec.T <= c.smooth_domain[0][1])

    g_ok = None
    g_min = None
    if theorem_id == "pointwise":
        if all(c.has_order(*o) for o in _GAP_ORDERS):
            g_min = float(np.min(np.abs(lie_gap_values(c, float(t0), xs))))
            g_ok = bool(np.isfinite(g_min) and g_min > threshold)
        else:
            g_ok = False

    if not smooth:
        verdict = "undeclared"
    elif b_ok and (g_ok is None or g_ok):
        verdict = "satisfied"
    else:
        verdict = "violated"
    return ConditionReport(theorem_id, (lo, hi), float(t0), b_ok, b_min, g_ok,
                           g_min, bool(smooth), verdict, grid_size, threshold,
                           spec.name)


# ---------------------------------------------------------------------------
# Localisation

_BINOM = ((1.0, 0.0, 0.0, 0.0), (1.0, 1.0, 0.0, 0.0), (1.0, 2.0, 1.0, 0.0),
          (1.0, 3.0, 3.0, 1.0))


def _build_localized(base, jitter):
    plateau = _bump.build(jitter)[1]

    def loc(w, i, j, t, x, p):
        n = p.shape[0]
        l1 = p[n - 7]
        l2 = p[n - 6]
        l3 = p[n - 5]
        r3 = p[n - 4]
        r2 = p[n - 3]
        r1 = p[n - 2]
        sgn = p[n - 1]
        in1 = (x > l1) & (x < r1)
        in3 = (x >= l3) & (x <= r3)
        # base coefficients are only read inside I1; elsewhere eta1 vanishes
        xb = x * in1 + (1.0 - in1) * (0.5 * (l3 + r3))
        e0, e1, e2, e3 = plateau(x, l1, l2, r2, r1)
        acc = base(w, i, j, t, xb, p) * e0
        if j >= 1:
            acc = acc + _BINOM[j][1] * e1 * base(w, i, j - 1, t, xb, p)
        if j >= 2:
            acc = acc + _BINOM[j][2] * e2 * base(w, i, j - 2, t, xb, p)
        if j >= 3:
            acc = acc + e3 * base(w, i, j - 3, t, xb, p)
        if w == 1 and i == 0:
            q0, q1, q2, q3 = plateau(x, l2, l3, r3, r2)
            if j == 0:
                acc = acc + sgn * (1.0 - q0)
            elif j == 1:
                acc = acc - sgn * q1
            elif j == 2:
                acc = acc - sgn * q2
            else:
                acc = acc - sgn * q3
        # on the inner interval route through the original coefficients
        direct = base(w, i, j, t, xb, p)
        return direct * in3 + acc * (1.0 - in3)

    return jitter(loc)


def _interval(iv):
    lo, hi = float(iv[0]), float(iv[1])
    return lo, hi


def localize(spec: SdeSpec, I1, I2, I3) -> SdeSpec:
    """Smoothly cut the coefficients off outside ``I1``.

    Returns a spec with ``a~ = eta1 * a`` and ``b~ = eta1 * b + s * eta2``
    where ``eta1`` is 1 on ``I2`` and 0 off ``I1``, ``eta2`` is 0 on ``I3``
    and 1 off ``I2``, and ``s`` is the sign of ``b`` on ``I1``.  The result
    equals the original coefficients on the closure of ``I3``, is globally
    bounded and Lipschitz, and has a diffusion bounded away from zero.

    Passing ``(-inf, inf)`` for all three intervals returns the equation
    unchanged (the trivial window).
    """
    (l1, r1), (l2, r2), (l3, r3) = _interval(I1), _interval(I2), _interval(I3)
    recipe = None
    if spec.recipe is not None:
        recipe = ("localize", spec.recipe, ((l1, r1), (l2, r2), (l3, r3)))
    if all(lo == -INF and hi == INF for lo, hi in ((l1, r1), (l2, r2),
                                                   (l3, r3))):
        return dataclasses.replace(spec, name=f"localized_{spec.name}",
                                   recipe=recipe)
    finite = all(math.isfinite(v) for v in (l1, l2, l3, r3, r2, r1))
    if not finite or not (l1 < l2 < l3 < r3 < r2 < r1):
        raise ValueError(
            "intervals must be bounded and strictly nested: "
            f"I1={I1}, I2={I2}, I3={I3}")
    c = spec.coeffs
    if c.space_interval_containing(l1, r1, closed=True) is None:
        raise PreconditionError("closure of I1 must lie in the smooth domain")
    xs = np.linspace(l1, r1, 4097)
    ts = [0.0] if c.autonomous else np.linspace(0.0, spec.T, 17)
    bvals = np.concatenate([np.atleast_1d(c.b(0, 0, t, xs)) for t in ts])
    if not np.all(np.isfinite(bvals)) or np.min(np.abs(bvals)) <= 0.0:
        raise PreconditionError("b vanishes on the closure of I1")
    if np.any(np.sign(bvals) != np.sign(bvals[0])):
        raise PreconditionError("b changes sign on I1")
    sgn = float(np.sign(bvals[0]))

    base_func = c.func
    params = np.concatenate([c.params, [l1, l2, l3, r3, r2, r1, sgn]])
    orders = {k: (v[0], min(v[1], 3)) for k, v in c.max_order.items()}

    def builder(jitter, _c=c):
        base = _c.nb_func if jitter is _accel.njit else _c.func
        return _build_localized(base, jitter)

    field_ = CoefficientField(
        _build_localized(base_func, _accel.identity), params, orders,
        ((c.smooth_domain[0][0], c.smooth_domain[0][1]), ((-INF, INF),)),
        c.autonomous, builder=builder)
    return SdeSpec(field_, spec.T, spec.x0, spec.initial, None,
                   f"localized_{spec.name}", spec.family, "taylor15", recipe)


# ---------------------------------------------------------------------------
# Catalog

_FULL = {"a": (2, 3), "b": (2, 3)}
_DEFAULTS = {
    "cir": {"delta": 5.0, "beta": 1.0, "sigma": 2.0, "x0": 1.0, "T": 1.0},
    "squared_bessel": {"x0": 1.0, "T": 1.0},
    "quintic": {"x0": 1.0, "T": 1.0},
    "gbm": {"alpha": 0.5, "beta": 0.8, "x0": 1.0, "T": 1.0},
    "sgn_drift": {"x0": 0.5, "T": 1.0},
    "sgn_drift_plain": {"x0": 0.5, "T": 1.0},
}


def _gbm_exact(alpha, beta):
    def exact(x0, t, w):
        return x0 * np.exp((alpha - 0.5 * beta * beta) * t + beta * w)
    return exact


def catalog(name: str, params: Optional[dict] = None) -> SdeSpec:
    """Built-in equations.

    ``cir``: ``dX = (delta - beta X) dt + sigma sqrt|X| dW`` (delta, sigma > 0,
    beta >= 0, x0 > 0); rate targets assume sigma = 2.
    ``squared_bessel``: ``cir`` with delta=1, beta=0, sigma=2.
    ``quintic``: ``dX = -X^5 dt + X dW``.
    ``gbm``: ``dX = alpha X dt + beta X dW`` with its exact solution.
    ``sgn_drift``: ``dX = sgn(X)(1 + X) dt + dW``.
    ``sgn_drift_plain``: ``dX = sgn(X) dt + dW``.
    """
    if name not in _DEFAULTS:
        raise ValueError(f"unknown catalog equation {name!r}; "
                         f"choose from {CATALOG_NAMES}")
    given = dict(params or {})
    unknown = set(given) - set(_DEFAULTS[name])
    if name == "squared_bessel":
        unknown -= {"delta", "beta", "sigma"}
    if unknown:
        raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
    pr = {**_DEFAULTS[name], **given}
    T = float(pr["T"])
    x0 = float(pr["x0"])
    if not (T > 0):
        raise ValueError("T must be positive")
    recipe = ("catalog", name, tuple(sorted(pr.items())))
    pos = ((0.0, INF), ((0.0, INF),))
    line = ((0.0, INF), ((-INF, INF),))

    if name in ("cir", "squared_bessel"):
        if name == "squared_bessel":
            for key, val in (("delta", 1.0), ("beta", 0.0), ("sigma", 2.0)):
                if key in given and float(given[key]) != val:
                    raise ValueError(f"squared_bessel fixes {key}={val}")
            d, be, s = 1.0, 0.0, 2.0
        else:
            d, be, s = float(pr["delta"]), float(pr["beta"]), float(pr["sigma"])
        if not (d > 0 and s > 0 and be >= 0 and x0 > 0):
            raise ValueError("CIR needs delta > 0, sigma > 0, beta >= 0, x0 > 0")
        cf = CoefficientField(cc.cir, (d, be, s), _FULL, pos)
        ref = "drift_implicit_sqrt" if 4.0 * d > s * s else "euler"
        return SdeSpec(cf, T, x0, name=name, family="cir", reference=ref,
                       recipe=recipe)
    if name == "quintic":
        cf = CoefficientField(cc.quintic, (), _FULL, line)
        return SdeSpec(cf, T, x0, name=name, family="quintic",
                       reference="tamed_milstein", recipe=recipe)
    if name == "gbm":
        al, be = float(pr["alpha"]), float(pr["beta"])
        cf = CoefficientField(cc.gbm, (al, be), _FULL, line)
        return SdeSpec(cf, T, x0, exact_solution=_gbm_exact(al, be), name=name,
                       family="gbm", reference="exact", recipe=recipe)
    split = ((0.0, INF), ((-INF, 0.0), (0.0, INF)))
    func = cc.sgn_drift if name == "sgn_drift" else cc.sgn_drift_plain
    cf = CoefficientField(func, (), _FULL, split)
    return SdeSpec(cf, T, x0, name=name, family="sgn_drift",
                   reference="euler", recipe=recipe)


def linear_sde(a0: float, a1: float, b0: float, b1: float, x0: float = 1.0,
               T: float = 1.0) -> SdeSpec:
    """User equation ``dX = (a0 + a1 X) dt + (b0 + b1 X) dW`` on the real line.

    Reference solutions use the order-1.5 Taylor scheme.
    """
    p = tuple(float(v) for v in (a0, a1, b0, b1))
    cf = CoefficientField(cc.user_linear, p, _FULL,
                          ((0.0, INF), ((-INF, INF),)))
    return SdeSpec(cf, float(T), float(x0), name="linear", family="user",
                   reference="taylor15",
                   recipe=("linear", p + (float(x0), float(T))))
