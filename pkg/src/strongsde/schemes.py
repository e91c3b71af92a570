"""Equidistant discretisation schemes driven by a shared Brownian path.

Single-path entry points (``run_euler`` and friends) read ``W`` from a
:class:`~strongsde.brownian.PathState`, so several schemes run on one state
see identical increments.  ``simulate_batch`` runs the same kernels on a
matrix of pre-sampled paths for Monte Carlo work.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._kernels import SCHEME_CODES, run_scheme
from .brownian import PathState, grid_times
from .sde_model import CapabilityError, PreconditionError, SdeSpec

SCHEMES = ("euler", "milstein", "wagner_platen_truncated", "tamed_euler",
           "tamed_milstein", "drift_implicit_sqrt")
# Order-1.5 strong Taylor scheme; needs span integrals, so it is only used
# for reference solutions and never counts as an information-based method.
REFERENCE_ONLY = ("taylor15",)
CONTINUOUS = ("euler", "milstein")

_NEEDS = {
    "euler": [],
    "milstein": [("b", 0, 1)],
    "wagner_platen_truncated": [("a", 1, 2), ("b", 1, 2)],
    "taylor15": [("a", 1, 2), ("b", 1, 2)],
    "tamed_euler": [],
    "tamed_milstein": [("b", 0, 1)],
    "drift_implicit_sqrt": [],
}


@dataclass(frozen=True)
class SchemeConfig:
    scheme_id: str
    k: int
    continuous_time: bool = False

    def __post_init__(self):
        if self.scheme_id not in SCHEMES + REFERENCE_ONLY:
            raise ValueError(f"unknown scheme {self.scheme_id!r}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if self.continuous_time and self.scheme_id not in CONTINUOUS:
            raise ValueError(
                f"{self.scheme_id} has no continuous-time form")


def check_scheme(spec: SdeSpec, scheme: str) -> None:
    """Raise if ``spec`` cannot be integrated by ``scheme``."""
    if scheme not in _NEEDS:
        raise ValueError(f"unknown scheme {scheme!r}")
    spec.coeffs.require(_NEEDS[scheme])
    if scheme == "drift_implicit_sqrt":
        if spec.family != "cir" or spec.name.startswith("localized"):
            raise PreconditionError("drift_implicit_sqrt applies to CIR only")
        delta, _, sigma = spec.coeffs.params[:3]
        if not 4.0 * delta > sigma * sigma:
            raise PreconditionError(
                "drift_implicit_sqrt needs 4*delta > sigma**2")


@dataclass
class TrajectoryOutput:
    """Grid values with an evaluator on ``[0, T]``.

    ``mode`` is ``"linear"`` for the piecewise-linear interpolant or
    ``"continuous"`` when ``between(l, t)`` implements the scheme's own
    continuous-time formula on span ``l``.  At grid nodes the evaluator
    returns the stored value.
    """

    times: np.ndarray
    values: np.ndarray
    mode: str = "linear"
    between: Optional[Callable[[int, float], float]] = field(
        default=None, repr=False)
    scheme: str = ""

    @property
    def endpoint(self) -> float:
        return float(self.values[-1])

    @property
    def k(self) -> int:
        return len(self.times) - 1

    def evaluator(self, t: float) -> float:
        t = float(t)
        T = self.times[-1]
        if not (0.0 <= t <= T):
            raise ValueError(f"t={t} outside [0, {T}]")
        idx = int(np.searchsorted(self.times, t))
        if idx < len(self.times) and self.times[idx] == t:
            return float(self.values[idx])
        l = idx - 1
        if self.mode == "continuous" and self.between is not None:
            return float(self.between(l, t))
        t0, t1 = self.times[l], self.times[l + 1]
        x0, x1 = self.values[l], self.values[l + 1]
        return float(x0 + (t - t0) / (t1 - t0) * (x1 - x0))

    __call__ = evaluator

    def to_csv(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(["t", "value"])
        for t, v in zip(self.times, self.values):
            w.writerow([repr(float(t)), repr(float(v))])


def interpolate_linear(traj: TrajectoryOutput) -> TrajectoryOutput:
    return TrajectoryOutput(traj.times.copy(), traj.values.copy(), "linear",
                            None, traj.scheme)


def initial_value(spec: SdeSpec, path: PathState) -> float:
    if spec.x0 is not None:
        return float(spec.x0)
    return float(spec.initial_values(path.initial_rng, 1)[0])


def simulate_batch(spec: SdeSpec, scheme: str, x0, W, bridge=None,
                   backend=None) -> np.ndarray:
    """Run ``scheme`` on Brownian values ``W`` given on ``grid_times(T, k)``.

    ``W`` has shape (reps, k + 1) with ``W[:, 0] == 0``.  ``bridge`` holds
    the span bridge integrals needed by ``taylor15``.  ``scheme="exact"``
    evaluates the closed-form solution at the grid.
    """
    W = np.asarray(W, dtype=np.float64)
    reps, k1 = W.shape
    k = k1 - 1
    h = spec.T / k
    x0 = np.broadcast_to(np.asarray(x0, dtype=np.float64), (reps,))
    if scheme == "exact":
        if spec.exact_solution is None:
            raise PreconditionError(f"{spec.name} has no exact solution")
        t = grid_times(spec.T, k)
        return spec.exact_solution(x0[:, None], t[None, :], W)
    check_scheme(spec, scheme)
    dW = np.diff(W, axis=1)
    dZ = None
    if scheme == "taylor15":
        if bridge is None:
            raise ValueError("taylor15 needs span bridge integrals")
        dZ = 0.5 * h * dW + bridge
    return run_scheme(scheme, spec.coeffs, x0, dW, h, 1.0 / k, dZ, backend)


def _span_coeffs(spec, scheme, X):
    """Drift, diffusion and Milstein factor at the left node of each span."""
    c = spec.coeffs
    f, p = c.func, c.params
    k = X.shape[-1] - 1
    t = grid_times(spec.T, k)[:-1]
    xl = X[..., :-1]
    with np.errstate(all="ignore"):
        a = f(0, 0, 0, t, xl, p)
        b = f(1, 0, 0, t, xl, p)
        if scheme == "milstein":
            bb1 = b * f(1, 0, 1, t, xl, p)
        else:
            bb1 = None
    return a, b, bb1


def dense_values(spec: SdeSpec, scheme: str, X, W_dense, mode="linear"):
    """Trajectory values on a refinement of the scheme grid.

    ``X`` has shape (reps, k + 1); ``W_dense`` gives ``W`` on
    ``grid_times(T, m)`` with ``m`` a multiple of ``k``.  ``mode="linear"``
    interpolates the grid values; ``mode="continuous"`` applies the
    continuous-time Euler or Milstein formula inside each span.  Node values
    are copied exactly.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    W_dense = np.atleast_2d(W_dense)
    reps, k1 = X.shape
    k = k1 - 1
    m = W_dense.shape[1] - 1
    if m % k:
        raise ValueError("dense grid must refine the scheme grid")
    r = m // k
    frac = np.arange(r) / r
    out = np.empty((reps, m + 1))
    if mode == "linear":
        left = X[:, :-1, None]
        right = X[:, 1:, None]
        body = left + (right - left) * frac[None, None, :]
    elif mode == "continuous":
        if scheme not in CONTINUOUS:
            raise ValueError(f"{scheme} has no continuous-time form")
        a, b, bb1 = _span_coeffs(spec, scheme, X)
        s = (spec.T / k) * frac
        dW = (W_dense[:, :-1].reshape(reps, k, r)
              - W_dense[:, :-1:r][:, :, None])
        with np.errstate(all="ignore"):
            body = X[:, :-1, None] + a[..., None] * s + b[..., None] * dW
            if scheme == "milstein":
                body = body + 0.5 * bb1[..., None] * (dW * dW - s)
    else:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    out[:, :-1] = body.reshape(reps, m)
    out[:, ::r] = X
    return out


def _run_on_path(spec, scheme, k, path, x0=None, backend=None):
    check_scheme(spec, scheme)
    T = spec.T
    times = grid_times(T, k)
    W = np.empty(k + 1)
    W[0] = 0.0
    for l in range(1, k + 1):
        W[l] = path.evaluate(times[l])
    if x0 is None:
        x0 = initial_value(spec, path)
    bridge = None
    if scheme == "taylor15":
        bridge = np.array([[path.span_time_integral(times[l], times[l + 1])
                            for l in range(k)]])
    X = simulate_batch(spec, scheme, x0, W[None, :], bridge, backend)[0]
    return times, W, X


def _continuous_between(spec, scheme, times, W, X, path):
    a, b, bb1 = _span_coeffs(spec, scheme, X[None, :])
    a, b = a[0], b[0]
    bb1 = None if bb1 is None else bb1[0]

    def between(l, t):
        s = t - times[l]
        dw = path.evaluate(t) - W[l]
        v = X[l] + a[l] * s + b[l] * dw
        if bb1 is not None:
            v = v + 0.5 * bb1[l] * (dw * dw - s)
        return v

    return between


def run_euler(spec: SdeSpec, k: int, path: PathState, continuous=False,
              x0=None, backend=None) -> TrajectoryOutput:
    """Euler-Maruyama on ``k`` equidistant steps.

    With ``continuous=True`` the evaluator is
    ``X(t_l) + a(t_l, X(t_l)) (t - t_l) + b(t_l, X(t_l)) (W(t) - W(t_l))``
    between nodes, reading ``W(t)`` from the path.
    """
    SchemeConfig("euler", k, continuous)
    times, W, X = _run_on_path(spec, "euler", k, path, x0, backend)
    if continuous:
        return TrajectoryOutput(times, X, "continuous",
                                _continuous_between(spec, "euler", times, W,
                                                    X, path), "euler")
    return TrajectoryOutput(times, X, "linear", None, "euler")


def run_milstein(spec: SdeSpec, k: int, path: PathState, continuous=False,
                 x0=None, backend=None) -> TrajectoryOutput:
    """Milstein scheme; adds ``(b b')(dW**2 - h) / 2`` to the Euler update."""
    SchemeConfig("milstein", k, continuous)
    times, W, X = _run_on_path(spec, "milstein", k, path, x0, backend)
    if continuous:
        return TrajectoryOutput(times, X, "continuous",
                                _continuous_between(spec, "milstein", times,
                                                    W, X, path), "milstein")
    return TrajectoryOutput(times, X, "linear", None, "milstein")


def run_wagner_platen_truncated(spec: SdeSpec, k: int, path: PathState,
                                x0=None, backend=None) -> TrajectoryOutput:
    """Milstein plus the ``dW h``, ``dW**3`` and ``h**2`` Taylor terms."""
    times, _, X = _run_on_path(spec, "wagner_platen_truncated", k, path, x0,
                               backend)
    return TrajectoryOutput(times, X, "linear", None,
                            "wagner_platen_truncated")


def run_tamed(spec: SdeSpec, k: int, path: PathState, variant="euler",
              x0=None, backend=None) -> TrajectoryOutput:
    """Tamed Euler (drift divided by ``1 + |a|/k``) or tamed Milstein.

    The Milstein variant tames ``a``, ``b`` and ``b b'`` separately with
    factor ``1 / (1 + |f| / k)``.
    """
    if variant not in ("euler", "milstein"):
        raise ValueError("variant must be 'euler' or 'milstein'")
    scheme = "tamed_" + variant
    times, _, X = _run_on_path(spec, scheme, k, path, x0, backend)
    return TrajectoryOutput(times, X, "linear", None, scheme)


def run_drift_implicit_sqrt(spec: SdeSpec, k: int, path: PathState, x0=None,
                            backend=None) -> TrajectoryOutput:
    """Drift-implicit scheme for ``Y = sqrt(X)`` of a CIR process.

    Needs ``4 delta > sigma**2``; iterates stay strictly positive.
    """
    times, _, X = _run_on_path(spec, "drift_implicit_sqrt", k, path, x0,
                               backend)
    return TrajectoryOutput(times, X, "linear", None, "drift_implicit_sqrt")


def run_taylor15(spec: SdeSpec, k: int, path: PathState, x0=None,
                 backend=None) -> TrajectoryOutput:
    """Order-1.5 strong Taylor scheme (uses span integrals of the path)."""
    times, _, X = _run_on_path(spec, "taylor15", k, path, x0, backend)
    return TrajectoryOutput(times, X, "linear", None, "taylor15")


def run(spec: SdeSpec, config: SchemeConfig, path: PathState, x0=None,
        backend=None) -> TrajectoryOutput:
    s = config.scheme_id
    if s == "euler":
        return run_euler(spec, config.k, path, config.continuous_time, x0,
                         backend)
    if s == "milstein":
        return run_milstein(spec, config.k, path, config.continuous_time, x0,
                            backend)
    if s == "wagner_platen_truncated":
        return run_wagner_platen_truncated(spec, config.k, path, x0, backend)
    if s in ("tamed_euler", "tamed_milstein"):
        return run_tamed(spec, config.k, path, s[6:], x0, backend)
    if s == "drift_implicit_sqrt":
        return run_drift_implicit_sqrt(spec, config.k, path, x0, backend)
    return run_taylor15(spec, config.k, path, x0, backend)


def reference_scheme(spec: SdeSpec) -> str:
    """Scheme used to build reference solutions for ``spec``."""
    if spec.exact_solution is not None:
        return "exact"
    if spec.reference is None:
        raise PreconditionError(
            f"{spec.name} has neither a reference scheme nor an exact "
            "solution")
    return spec.reference


__all__ = [
    "SCHEMES", "REFERENCE_ONLY", "SchemeConfig", "TrajectoryOutput",
    "check_scheme", "interpolate_linear", "simulate_batch", "dense_values",
    "run_euler", "run_milstein", "run_wagner_platen_truncated", "run_tamed",
    "run_drift_implicit_sqrt", "run_taylor15", "run", "reference_scheme",
    "initial_value", "CapabilityError", "SCHEME_CODES",
]
