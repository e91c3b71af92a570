"""Weight processes and auxiliary schemes behind the lower error bounds.

Everything here works on the unit horizon.  An equation on ``[0, T]`` maps
to one on ``[0, 1]`` through ``X~(s) = X(s T)``, which has drift
``T a(s T, x)`` and diffusion ``sqrt(T) b(s T, x)``.

Diagnostics that read span integrals of the Brownian path are
oracle-assisted: the integrals come from the auxiliary stream and are never
charged to a method's cost.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import schemes
from .brownian import (PathState, aggregate_span_integrals, grid_times,
                       sample_grid, sample_initial, sample_span_integrals)
from .prob_tools import FitResult, ks_two_sample, loglog_fit
from .sde_model import SdeSpec, lie_gap_values

__all__ = [
    "WeightPath", "AuxState", "weight_arrays", "aux_arrays",
    "build_weight_path", "build_aux_scheme", "aux_identity_error", "rhat",
    "conditional_variance_bound", "weight_continuous", "weight_process_batch",
    "milstein_aux", "milstein_aux_dense", "ExponentReport",
    "aux_error_experiment", "weight_gap_experiment", "rhat_samples",
    "rhat_stability", "conditional_variance_mc", "milstein_aux_experiment",
    "identity_suite",
]

_WP = "wagner_platen_truncated"
_WP_NEEDS = [("a", 1, 2), ("b", 1, 2)]


def _require_unit(spec: SdeSpec):
    if spec.T != 1.0:
        raise ValueError(
            "proof_lab works on the unit horizon; rescale with drift "
            "T*a(sT, x) and diffusion sqrt(T)*b(sT, x)")
    spec.coeffs.require(_WP_NEEDS)


@dataclass
class WeightPath:
    times: np.ndarray
    mhat: np.ndarray
    Mhat: np.ndarray
    Yhat: np.ndarray
    gap: np.ndarray
    X_wpt: np.ndarray
    W: np.ndarray

    @property
    def k(self):
        return len(self.mhat)


@dataclass
class AuxState:
    weights: WeightPath
    Q: np.ndarray
    X_aux: np.ndarray
    J: np.ndarray
    bridge: np.ndarray
    oracle_assisted: bool = True

    def to_csv(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(["t", "mhat", "Mhat", "Yhat", "Qbar"])
        wp = self.weights
        for l in range(wp.k + 1):
            row = [wp.times[l],
                   wp.mhat[l] if l < wp.k else "",
                   wp.Mhat[l],
                   wp.Yhat[l] if l < wp.k else "",
                   self.Q[l]]
            w.writerow(row)


def weight_arrays(spec: SdeSpec, X, W):
    """Discrete weights from Wagner-Platen iterates ``X`` on the unit grid.

    Returns ``(mhat, Mhat, gap, Yhat)`` with shapes (R, k), (R, k+1),
    (R, k), (R, k):
    ``mhat_l = 1 + a'(X_l) h + b'(X_l) dW_l``,
    ``Mhat_k = 1``, ``Mhat_l = mhat_l Mhat_{l+1}``, and
    ``Yhat_l = Mhat_{l+1} * G(t_l, X_l)`` with ``G`` the Lie gap.
    """
    X = np.atleast_2d(X)
    W = np.atleast_2d(W)
    reps, k1 = X.shape
    k = k1 - 1
    h = spec.T / k
    t = grid_times(spec.T, k)[:-1]
    f, p = spec.coeffs.func, spec.coeffs.params
    xl = X[:, :-1]
    dW = np.diff(W, axis=1)
    with np.errstate(all="ignore"):
        mhat = 1.0 + f(0, 0, 1, t, xl, p) * h + f(1, 0, 1, t, xl, p) * dW
        gap = lie_gap_values(spec.coeffs, t, xl)
    Mhat = np.empty((reps, k1))
    Mhat[:, k] = 1.0
    for l in range(k - 1, -1, -1):
        Mhat[:, l] = mhat[:, l] * Mhat[:, l + 1]
    Yhat = Mhat[:, 1:] * gap
    return mhat, Mhat, gap, Yhat


def aux_arrays(mhat, gap, J):
    """``Qbar_0 = 0``, ``Qbar_{l+1} = mhat_l Qbar_l + G_l J_l``."""
    reps, k = mhat.shape
    Q = np.empty((reps, k + 1))
    Q[:, 0] = 0.0
    for l in range(k):
        Q[:, l + 1] = mhat[:, l] * Q[:, l] + gap[:, l] * J[:, l]
    return Q


def _path_grid(spec, path, k, x0):
    times = grid_times(spec.T, k)
    W = np.empty(k + 1)
    W[0] = 0.0
    for l in range(1, k + 1):
        W[l] = path.evaluate(times[l])
    if x0 is None:
        x0 = schemes.initial_value(spec, path)
    return times, W, x0


def build_weight_path(spec: SdeSpec, path: PathState, k: int,
                      x0: Optional[float] = None) -> WeightPath:
    _require_unit(spec)
    times, W, x0 = _path_grid(spec, path, k, x0)
    X = schemes.simulate_batch(spec, _WP, x0, W[None, :])
    mhat, Mhat, gap, Yhat = weight_arrays(spec, X, W[None, :])
    return WeightPath(times, mhat[0], Mhat[0], Yhat[0], gap[0], X[0], W)


def build_aux_scheme(spec: SdeSpec, path: PathState, k: int,
                     x0: Optional[float] = None) -> AuxState:
    """Wagner-Platen iterates plus the weighted span-integral correction."""
    wp = build_weight_path(spec, path, k, x0)
    h = spec.T / k
    bridge = np.array([path.span_time_integral(wp.times[l], wp.times[l + 1])
                       for l in range(k)])
    J = 0.5 * h * np.diff(wp.W) + bridge
    Q = aux_arrays(wp.mhat[None], wp.gap[None], J[None])[0]
    return AuxState(wp, Q, wp.X_wpt + Q, J, bridge)


def aux_identity_error(aux: AuxState) -> float:
    """Relative gap in ``Xaux(1) = Xwpt(1) + sum_r Yhat_r J_r``."""
    wp = aux.weights
    terms = wp.Yhat * aux.J
    rhs = wp.X_wpt[-1] + terms.sum()
    scale = max(abs(aux.X_aux[-1]), abs(wp.X_wpt[-1]),
                float(np.abs(terms).sum()), 1e-300)
    return abs(aux.X_aux[-1] - rhs) / scale


def rhat(weights) -> float:
    """``(1/k) sum_l |Yhat_l|^(2/3)``."""
    y = weights.Yhat if isinstance(weights, WeightPath) else np.asarray(
        weights, float)
    return float(np.mean(np.abs(y) ** (2.0 / 3.0), axis=-1))


def conditional_variance_bound(weights, d, k: int) -> float:
    """``sum_l Yhat_l**2 / (12 k**3) / (d_l + 1)**2``."""
    y = weights.Yhat if isinstance(weights, WeightPath) else np.asarray(
        weights, float)
    d = np.broadcast_to(np.asarray(d), y.shape)
    if np.any(d < 0) or np.any(np.asarray(d) != np.floor(d)):
        raise ValueError("occupancies must be non-negative integers")
    return float(np.sum(y * y / (12.0 * k ** 3) / (d + 1.0) ** 2))


def weight_process_batch(spec: SdeSpec, X, W):
    """``M(t) G(t, X(t))`` at every node of a fine grid.

    ``M(t_j) = exp(sum_{i >= j} (a' - b'^2/2)(X_i) h + b'(X_i) dW_i)``,
    i.e. left-point quadrature of both exponent integrals.
    """
    X = np.atleast_2d(X)
    W = np.atleast_2d(W)
    k = X.shape[1] - 1
    h = spec.T / k
    t = grid_times(spec.T, k)
    f, p = spec.coeffs.func, spec.coeffs.params
    xl = X[:, :-1]
    with np.errstate(all="ignore"):
        b1 = f(1, 0, 1, t[:-1], xl, p)
        inc = (f(0, 0, 1, t[:-1], xl, p) - 0.5 * b1 * b1) * h + b1 * np.diff(
            W, axis=1)
        expo = np.zeros_like(X)
        expo[:, :-1] = np.cumsum(inc[:, ::-1], axis=1)[:, ::-1]
        return np.exp(expo) * lie_gap_values(spec.coeffs, t, X)


def weight_continuous(spec: SdeSpec, path: PathState, t: float,
                      fine_k: int, x0: Optional[float] = None) -> float:
    """Fine-grid value of the weight process at a fine node ``t``.

    The solution is replaced by the reference scheme on ``fine_k`` steps.
    """
    _require_unit(spec)
    j = t * fine_k
    if abs(j - round(j)) > 1e-9 or not (0 <= t <= 1):
        raise ValueError("t must be a node of the fine grid")
    j = int(round(j))
    ref = schemes.reference_scheme(spec)
    times, W, x0 = _path_grid(spec, path, fine_k, x0)
    bridge = None
    if ref == "taylor15":
        bridge = np.array([[path.span_time_integral(times[l], times[l + 1])
                            for l in range(fine_k)]])
    X = schemes.simulate_batch(spec, ref, x0, W[None, :], bridge)
    return float(weight_process_batch(spec, X, W[None, :])[0, j])


def milstein_aux_dense(spec: SdeSpec, X, W_dense):
    """Milstein with its span correction removed, on a refinement of the grid.

    On ``(t_l, t_{l+1}]`` the value is
    ``X(t_l) + a(X(t_l)) s + b(X(t_l)) (W(t_l + s) - W(t_l))``; the process is
    left-continuous, so node ``l+1`` carries the limit from the left.
    """
    X = np.atleast_2d(X)
    W_dense = np.atleast_2d(W_dense)
    reps, k1 = X.shape
    k = k1 - 1
    m = W_dense.shape[1] - 1
    r = m // k
    a, b, _ = schemes._span_coeffs(spec, "euler", X)
    s = (spec.T / k) * np.arange(1, r + 1) / r
    base = W_dense[:, :-1:r][:, :, None]
    dW = W_dense[:, 1:].reshape(reps, k, r) - base
    out = np.empty((reps, m + 1))
    out[:, 0] = X[:, 0]
    with np.errstate(all="ignore"):
        out[:, 1:] = (X[:, :-1, None] + a[..., None] * s
                      + b[..., None] * dW).reshape(reps, m)
    return out


def milstein_aux(spec: SdeSpec, path: PathState, k: int,
                 x0: Optional[float] = None) -> schemes.TrajectoryOutput:
    """Auxiliary process of the continuous-time Milstein scheme.

    Grid values hold left limits: at ``t_{l+1}`` the Milstein value minus
    ``(b b')(X(t_l)) ((dW_l)**2 - h) / 2``.
    """
    traj = schemes.run_milstein(spec, k, path, x0=x0)
    times, X = traj.times, traj.values
    W = np.array([0.0] + [path.evaluate(t) for t in times[1:]])
    a, b, bb1 = schemes._span_coeffs(spec, "milstein", X[None, :])
    a, b, bb1 = a[0], b[0], bb1[0]
    h = spec.T / k
    dW = np.diff(W)
    corr = 0.5 * bb1 * (dW * dW - h)
    node = X.copy()
    node[1:] = X[1:] - corr

    def between(l, t):
        s = t - times[l]
        dw = path.evaluate(t) - W[l]
        return X[l] + a[l] * s + b[l] * dw

    out = schemes.TrajectoryOutput(times, node, "continuous", between,
                                   "milstein_aux")
    out.correction = corr
    out.milstein_values = X
    return out


# ---------------------------------------------------------------------------
# Monte Carlo experiments


@dataclass
class ExponentReport:
    name: str
    k_grid: list
    means: list
    ses: list
    fit: FitResult
    target: float
    band: tuple
    replications: int
    seed: int
    runtime: float
    notes: str = ""

    @property
    def passed(self) -> bool:
        return self.band[0] <= self.fit.slope <= self.band[1]

    def to_dict(self):
        return {
            "name": self.name, "k_grid": list(map(int, self.k_grid)),
            "means": list(map(float, self.means)),
            "ses": list(map(float, self.ses)), "slope": self.fit.slope,
            "slope_ci": list(self.fit.ci), "r2": self.fit.r2,
            "target": self.target, "band": list(self.band),
            "passed": self.passed, "replications": self.replications,
            "seed": self.seed, "runtime": self.runtime, "notes": self.notes,
        }


def _chunks(M, size):
    for start in range(0, M, size):
        yield range(start, min(M, start + size))


def _fine_sample(spec, seed, reps, K, with_bridge):
    W = sample_grid(seed, reps, K, spec.T)
    bridge = sample_span_integrals(seed, reps, K, spec.T) if with_bridge \
        else None
    x0 = sample_initial(spec, seed, reps)
    return W, bridge, x0


def _reference(spec, x0, W, bridge):
    ref = schemes.reference_scheme(spec)
    return schemes.simulate_batch(spec, ref, x0, W,
                                  bridge if ref == "taylor15" else None)


def aux_error_experiment(spec: SdeSpec, k_grid: Sequence[int], M: int,
                         seed: int = 0, fine_factor: int = 16,
                         band=(-1.8, -1.1), chunk: int = 256):
    """Mean ``|X_ref(1) - Xaux_k(1)|`` over ``k_grid`` and its log-log slope.

    Also returns the largest relative residual of the endpoint identity seen
    over all paths and ``k``.
    """
    _require_unit(spec)
    t0 = time.perf_counter()
    k_grid = sorted(int(k) for k in k_grid)
    K = fine_factor * k_grid[-1]
    hf = spec.T / K
    sums = np.zeros(len(k_grid))
    sq = np.zeros(len(k_grid))
    worst = 0.0
    for reps in _chunks(M, chunk):
        W, bridge, x0 = _fine_sample(spec, seed, reps, K, True)
        xref = _reference(spec, x0, W, bridge)[:, -1]
        for i, k in enumerate(k_grid):
            r = K // k
            Wk = W[:, ::r]
            J = aggregate_span_integrals(W, bridge, r, hf)
            X = schemes.simulate_batch(spec, _WP, x0, Wk)
            mhat, _, gap, Yhat = weight_arrays(spec, X, Wk)
            Q = aux_arrays(mhat, gap, J)
            xaux = X[:, -1] + Q[:, -1]
            terms = Yhat * J
            rhs = X[:, -1] + terms.sum(axis=1)
            scale = np.maximum.reduce([np.abs(xaux), np.abs(X[:, -1]),
                                       np.abs(terms).sum(axis=1)])
            worst = max(worst, float(np.max(np.abs(xaux - rhs) / scale)))
            e = np.abs(xref - xaux)
            sums[i] += e.sum()
            sq[i] += (e * e).sum()
    means = sums / M
    ses = np.sqrt(np.maximum(sq / M - means ** 2, 0.0) / (M - 1))
    fit = loglog_fit(k_grid, means)
    rep = ExponentReport("aux_endpoint", k_grid, list(means), list(ses), fit,
                         -1.5, tuple(band), M, seed,
                         time.perf_counter() - t0,
                         f"reference={schemes.reference_scheme(spec)} "
                         f"k_ref={K}; oracle-assisted")
    rep.identity_residual = worst
    return rep


def weight_gap_experiment(spec: SdeSpec, k_grid: Sequence[int], M: int,
                          seed: int = 0, fine_factor: int = 64,
                          band=(-0.8, -0.2), chunk: int = 128):
    """``max_l E|Y(t_l) - Yhat_k(t_l)|`` over ``k_grid`` and its slope."""
    _require_unit(spec)
    t0 = time.perf_counter()
    k_grid = sorted(int(k) for k in k_grid)
    K = fine_factor * k_grid[-1]
    sums = [np.zeros(k) for k in k_grid]
    sq = [np.zeros(k) for k in k_grid]
    for reps in _chunks(M, chunk):
        W, bridge, x0 = _fine_sample(spec, seed, reps, K, True)
        xref = _reference(spec, x0, W, bridge)
        ycont = weight_process_batch(spec, xref, W)
        for i, k in enumerate(k_grid):
            r = K // k
            Wk = W[:, ::r]
            X = schemes.simulate_batch(spec, _WP, x0, Wk)
            _, _, _, Yhat = weight_arrays(spec, X, Wk)
            e = np.abs(ycont[:, :-1:r] - Yhat)
            sums[i] += e.sum(axis=0)
            sq[i] += (e * e).sum(axis=0)
    means, ses = [], []
    for s, q in zip(sums, sq):
        m = s / M
        j = int(np.argmax(m))
        means.append(float(m[j]))
        ses.append(float(math.sqrt(max(q[j] / M - m[j] ** 2, 0.0) / (M - 1))))
    fit = loglog_fit(k_grid, means)
    return ExponentReport("weight_gap", k_grid, means, ses, fit, -0.5,
                          tuple(band), M, seed, time.perf_counter() - t0,
                          f"fine grid {K} steps, left-point quadrature")


def rhat_samples(spec: SdeSpec, k: int, M: int, seed: int = 0,
                 chunk: int = 1024) -> np.ndarray:
    _require_unit(spec)
    out = []
    for reps in _chunks(M, chunk):
        W = sample_grid(seed, reps, k, spec.T)
        x0 = sample_initial(spec, seed, reps)
        X = schemes.simulate_batch(spec, _WP, x0, W)
        _, _, _, Yhat = weight_arrays(spec, X, W)
        out.append(np.mean(np.abs(Yhat) ** (2.0 / 3.0), axis=1))
    return np.concatenate(out)


def rhat_stability(spec: SdeSpec, k1: int, k2: int, M: int, seed: int = 0):
    """KS distance between the laws of ``R_hat`` at two resolutions.

    Both samples use the same Brownian paths, read at two grids.
    """
    a = rhat_samples(spec, k1, M, seed)
    b = rhat_samples(spec, k2, M, seed)
    return ks_two_sample(a, b)


def conditional_variance_mc(spec: SdeSpec, k: int, seed: int = 0,
                            rep: int = 0, draws: int = 10 ** 5):
    """Variance of ``sum_l Yhat_l B_l`` with knots fixed and bridges redrawn.

    Returns ``(sample_variance, standard_error, bound)`` where ``bound`` is
    :func:`conditional_variance_bound` with zero occupancies.
    """
    wp = build_weight_path(spec, PathState(seed, rep), k)
    h = spec.T / k
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(rep, 7))))
    z = rng.standard_normal((draws, k)) * math.sqrt(h ** 3 / 12.0)
    s = z @ wp.Yhat
    v = float(np.var(s, ddof=1))
    se = v * math.sqrt(2.0 / (draws - 1))
    return v, se, conditional_variance_bound(wp, 0, k)


def milstein_aux_experiment(spec: SdeSpec, k_grid: Sequence[int], M: int,
                            seed: int = 0, fine_factor: int = 16,
                            band=(-1.25, -0.75), chunk: int = 256):
    """``sup_t E|X_ref(t) - Xmaux_k(t)|`` on the reference grid."""
    t0 = time.perf_counter()
    k_grid = sorted(int(k) for k in k_grid)
    K = fine_factor * k_grid[-1]
    sums = [np.zeros(K + 1) for _ in k_grid]
    sq = [np.zeros(K + 1) for _ in k_grid]
    for reps in _chunks(M, chunk):
        W, bridge, x0 = _fine_sample(spec, seed, reps, K, True)
        xref = _reference(spec, x0, W, bridge)
        for i, k in enumerate(k_grid):
            X = schemes.simulate_batch(spec, "milstein", x0, W[:, ::K // k])
            e = np.abs(xref - milstein_aux_dense(spec, X, W))
            sums[i] += e.sum(axis=0)
            sq[i] += (e * e).sum(axis=0)
    means, ses = [], []
    for s, q in zip(sums, sq):
        m = s / M
        j = int(np.argmax(m))
        means.append(float(m[j]))
        ses.append(float(math.sqrt(max(q[j] / M - m[j] ** 2, 0.0) / (M - 1))))
    fit = loglog_fit(k_grid, means)
    return ExponentReport("milstein_aux_sup_mean", k_grid, means, ses, fit,
                          -1.0, tuple(band), M, seed,
                          time.perf_counter() - t0, f"k_ref={K}")


def identity_suite(spec: SdeSpec, k_values=(8, 32, 128), paths: int = 1000,
                   seed: int = 0, tol: float = 1e-10):
    """Per-path endpoint identity and recursion checks.

    Returns ``(passed, worst_relative_residual, checked_paths)``.
    """
    worst = 0.0
    for k in k_values:
        for r in range(paths):
            aux = build_aux_scheme(spec, PathState(seed, r), k)
            worst = max(worst, aux_identity_error(aux))
            wp = aux.weights
            ok = (wp.Mhat[-1] == 1.0
                  and np.array_equal(wp.Mhat[:-1], wp.mhat * wp.Mhat[1:])
                  and np.array_equal(wp.Yhat, wp.Mhat[1:] * wp.gap))
            if not ok:
                return False, math.inf, r
    return worst <= tol, worst, paths * len(k_values)
