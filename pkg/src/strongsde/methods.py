"""Sequential evaluation methods ``(psi, chi, phi)`` with cost accounting.

A method sees only its data vector ``D_k = (X(0), W(tau_1), ..., W(tau_k))``.
``run_method`` feeds the rules immutable tuples and records a transcript, so
admissibility (every site computed from the previous data alone) can be
re-checked after the fact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from . import schemes
from ._kernels import NUMPY_OPS
from .brownian import PathState
from .sde_model import SdeSpec

STOP = "STOP"
GO = "GO"
OUTPUT_SPACES = ("scalar_at_T", "path_C", "path_Lp")
DEFAULT_CAP = 10 ** 6


class DivergenceError(RuntimeError):
    """A method exceeded its hard cap on evaluations."""


@dataclass(frozen=True)
class AdaptiveMethod:
    """Site, stop and output rules plus the declared budget ``n``.

    ``site_rule(k, D)`` returns ``tau_k`` from ``D_{k-1}``;
    ``stop_rule(k, D)`` returns ``STOP`` or ``GO`` from ``D_k``;
    ``output_rule(k, D)`` maps the final data to the output space.
    """

    site_rule: Callable[[int, tuple], float]
    stop_rule: Callable[[int, tuple], str]
    output_rule: Callable[[int, tuple], Any]
    budget: int
    output_space: str = "scalar_at_T"
    name: str = "method"
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.output_space not in OUTPUT_SPACES:
            raise ValueError(f"output_space must be one of {OUTPUT_SPACES}")
        if self.budget < 1:
            raise ValueError("budget must be positive")


@dataclass
class MethodRun:
    output: Any
    nu: int
    transcript: list = field(default_factory=list)
    x0: float = 0.0

    def data(self, k: Optional[int] = None) -> tuple:
        k = len(self.transcript) if k is None else k
        return (self.x0,) + tuple(w for _, w in self.transcript[:k])

    def to_csv(self, fh) -> None:
        fh.write("k,tau,w\n")
        for k, (t, w) in enumerate(self.transcript, start=1):
            fh.write(f"{k},{t!r},{w!r}\n")


def run_method(method: AdaptiveMethod, spec: SdeSpec, path: PathState,
               x0_draw: Optional[float] = None) -> MethodRun:
    """Execute the rule loop against ``path`` and apply the output rule."""
    x0 = schemes.initial_value(spec, path) if x0_draw is None else float(
        x0_draw)
    data = (x0,)
    transcript = []
    before = path.cost()
    k = 0
    while True:
        k += 1
        if k > method.cap:
            raise DivergenceError(
                f"{method.name}: more than {method.cap} evaluations")
        tau = float(method.site_rule(k, data))
        w = path.evaluate(tau)
        transcript.append((tau, w))
        data = data + (w,)
        decision = method.stop_rule(k, data)
        if decision not in (STOP, GO):
            raise ValueError(f"stop rule returned {decision!r}")
        if decision == STOP:
            break
    out = method.output_rule(k, data)
    run = MethodRun(out, k, transcript, x0)
    assert path.cost() - before == run.nu
    return run


def check_admissible(method: AdaptiveMethod, run: MethodRun) -> bool:
    """Re-derive every site from the recorded prefix and compare exactly."""
    for k, (tau, _) in enumerate(run.transcript, start=1):
        if float(method.site_rule(k, run.data(k - 1))) != tau:
            return False
    return True


def _trajectory_from_data(spec, scheme, n, data):
    times = schemes.grid_times(spec.T, n)
    W = np.empty(n + 1)
    W[0] = 0.0
    W[1:] = data[1:n + 1]
    X = schemes.simulate_batch(spec, scheme, data[0], W[None, :])[0]
    return times, W, X


def equidistant_wrapper(n: int, scheme_config, spec: SdeSpec,
                        output_space: str = "scalar_at_T") -> AdaptiveMethod:
    """Member of the equidistant class observing ``W(T k / n)``, k = 1..n.

    ``scheme_config`` is a :class:`~strongsde.schemes.SchemeConfig` or a
    scheme id; its step count is forced to ``n``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    scheme = getattr(scheme_config, "scheme_id", scheme_config)
    schemes.SchemeConfig(scheme, n)
    if scheme in schemes.REFERENCE_ONLY:
        raise ValueError(f"{scheme} needs span integrals and is not "
                         "information-admissible")
    schemes.check_scheme(spec, scheme)
    T = spec.T

    def site(k, data):
        return T * k / n

    def stop(k, data):
        return STOP if k >= n else GO

    def output(k, data):
        times, _, X = _trajectory_from_data(spec, scheme, n, data)
        if output_space == "scalar_at_T":
            return float(X[-1])
        return schemes.TrajectoryOutput(times, X, "linear", None, scheme)

    return AdaptiveMethod(site, stop, output, n, output_space,
                          f"equidistant_{scheme}_{n}")


@dataclass
class CostEstimate:
    mean: float
    se: float
    replications: int
    capped: int
    max_nu: int
    budget: int

    @property
    def within_budget(self) -> bool:
        """Mean cost is not significantly above the declared budget."""
        return self.mean <= self.budget + 2.0 * self.se

    @property
    def budget_violation(self) -> bool:
        return not self.within_budget


def average_cost(method: AdaptiveMethod, spec: SdeSpec, replications: int,
                 seed: int = 0) -> CostEstimate:
    """Monte Carlo mean of ``nu`` with its standard error.

    Runs that hit the cap are counted in ``capped`` and excluded from the
    mean.
    """
    if replications < 2:
        raise ValueError("need at least two replications")
    costs = []
    capped = 0
    for r in range(replications):
        try:
            costs.append(run_method(method, spec, PathState(seed, r)).nu)
        except DivergenceError:
            capped += 1
    c = np.asarray(costs, dtype=float)
    se = float(c.std(ddof=1) / math.sqrt(len(c))) if len(c) > 1 else math.nan
    return CostEstimate(float(c.mean()) if len(c) else math.nan, se,
                        replications, capped, int(c.max()) if len(c) else 0,
                        method.budget)


class _DemoReplay:
    """Rebuilds the demo's Euler state from a data vector.

    The state is a deterministic function of ``D``; the cached prefix only
    avoids replaying from scratch on every call.
    """

    def __init__(self, spec, n_base, m, lo, hi):
        self.f = spec.coeffs.func
        self.p = spec.coeffs.params
        self.T = spec.T
        self.nb = n_base
        self.m = m
        self.lo = lo
        self.hi = hi
        self.h_base = spec.T / n_base
        self.h_sub = spec.T / (n_base * m)
        self._reset(None)

    def _reset(self, x0):
        self.prefix = (x0,)
        self.x = x0
        self.w = 0.0
        self.j = 0          # index of the current base span
        self.s = 0          # substep within a refined span
        self.refined = False
        self.decided = False
        self.path = [(0.0, x0)]
        self.refined_steps = 0

    def _inside(self, x):
        return self.lo < x < self.hi

    def _plan(self):
        if not self.decided:
            self.refined = self.m > 1 and self._inside(self.x)
            self.decided = True
            self.s = 0

    def next_time(self):
        self._plan()
        if self.refined:
            return self.T * (self.j * self.m + self.s + 1) / (self.nb * self.m)
        return self.T * (self.j + 1) / self.nb

    def _advance(self, w_new):
        t_obs = self.next_time()
        if self.refined:
            h = self.h_sub
            t = (self.j * self.m + self.s) * h
        else:
            h = self.h_base
            t = self.j * h
        x = NUMPY_OPS["euler"](self.f, self.p, t, np.float64(self.x), h,
                               np.float64(w_new - self.w), 0.0, 0.0)
        self.x = float(x)
        self.w = w_new
        self.path.append((t_obs, self.x))
        if self.refined:
            self.refined_steps += 1
            self.s += 1
            if self.s == self.m:
                self.j += 1
                self.decided = False
        else:
            self.j += 1
            self.decided = False

    def sync(self, data):
        n_known = len(self.prefix)
        if data[:n_known] != self.prefix:
            self._reset(data[0])
            n_known = 1
        for w in data[n_known:]:
            self._advance(w)
        self.prefix = tuple(data)
        return self

    @property
    def done(self):
        return self.j >= self.nb


def adaptive_demo(n: int, refine_region, m: int, spec: SdeSpec,
                  output_space: str = "scalar_at_T") -> AdaptiveMethod:
    """Euler stepping that refines by ``m`` while the state lies in a region.

    The horizon is cut into ``n // m`` base spans.  At the start of each base
    span the current Euler state is checked: inside the open interval
    ``refine_region`` the span is taken in ``m`` substeps, otherwise in one.
    Hence ``nu <= (n // m) * m <= n`` on every run.  ``refine_region=None``
    never refines.
    """
    if m < 1 or n < 2 * m:
        raise ValueError("need m >= 1 and n >= 2 m")
    schemes.check_scheme(spec, "euler")
    nb = n // m
    lo, hi = (math.inf, -math.inf) if refine_region is None else (
        float(refine_region[0]), float(refine_region[1]))
    replay = _DemoReplay(spec, nb, m, lo, hi)

    def site(k, data):
        return replay.sync(data).next_time()

    def stop(k, data):
        return STOP if replay.sync(data).done else GO

    def output(k, data):
        r = replay.sync(data)
        if output_space == "scalar_at_T":
            return r.x
        t, x = zip(*r.path)
        return schemes.TrajectoryOutput(np.array(t), np.array(x), "linear",
                                        None, "euler")

    method = AdaptiveMethod(site, stop, output, n, output_space,
                            f"adaptive_demo_{n}_{m}")
    object.__setattr__(method, "replay", replay)
    return method


def demo_expected_cost_bm(n: int, m: int) -> float:
    """Exact mean cost of the demo for ``dX = dW``, ``X(0)=0``, region (0, inf).

    The state at a base node ``j >= 1`` equals ``W(j H)`` and is positive
    with probability 1/2; at ``j = 0`` it sits on the region's boundary.
    """
    nb = n // m
    return 1.0 + (nb - 1) * (1.0 + 0.5 * (m - 1))


__all__ = [
    "STOP", "GO", "AdaptiveMethod", "MethodRun", "DivergenceError",
    "run_method", "check_admissible", "equidistant_wrapper", "average_cost",
    "CostEstimate", "adaptive_demo", "demo_expected_cost_bm",
]
