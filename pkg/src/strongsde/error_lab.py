"""Monte Carlo strong errors, reference solutions and rate fitting.

Every replication draws one Brownian path on a fine reference grid of
``k_ref`` steps.  Schemes read the same path at their coarse grids, so scheme
and reference see identical increments on shared knots.  Path norms are
evaluated on a metric grid of ``resolution`` steps that refines every
compared grid and is refined by the reference grid.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import methods as mf
from . import schemes
from .brownian import (PathState, aggregate_span_integrals, grid_times,
                       sample_grid, sample_initial, sample_span_integrals)
from .prob_tools import loglog_fit, wilson_interval
from .sde_model import SdeSpec

__all__ = [
    "ErrorMetric", "ErrorEstimate", "RateTarget", "RateReport", "TARGETS",
    "reference_solution", "mc_error", "rate_experiment", "probability_tail",
    "TailReport", "RATES", "error_samples",
]

METRIC_KINDS = ("endpoint", "Lp", "sup", "max_pointwise")
DEFAULT_RESOLUTION = 4096
DEFAULT_KREF_FACTOR = 16
GATE_RATIO = 8.0


@dataclass(frozen=True)
class ErrorMetric:
    kind: str
    p: float = 1.0
    resolution: int = DEFAULT_RESOLUTION

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"metric kind must be one of {METRIC_KINDS}")
        if not self.p >= 1:
            raise ValueError("p must be at least 1")
        if int(self.resolution) != self.resolution or self.resolution < 1:
            raise ValueError("resolution must be a positive integer")

    @property
    def is_path(self):
        return self.kind != "endpoint"

    def label(self):
        return f"L{self.p:g}" if self.kind == "Lp" else self.kind


@dataclass
class ErrorEstimate:
    n: int
    mean: float
    se: float
    M: int
    samples: Optional[np.ndarray] = field(default=None, repr=False)
    pointwise_means: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def relative_se(self):
        return self.se / self.mean if self.mean > 0 else math.inf


def reference_solution(spec: SdeSpec, path: PathState,
                       k_ref: int) -> schemes.TrajectoryOutput:
    """Reference trajectory for ``spec`` on ``k_ref`` steps of ``path``.

    Uses the closed form when the equation has one, otherwise the scheme
    named by ``spec.reference``.
    """
    ref = schemes.reference_scheme(spec)
    times = grid_times(spec.T, k_ref)
    if ref == "exact":
        W = np.array([0.0] + [path.evaluate(t) for t in times[1:]])
        x0 = schemes.initial_value(spec, path)
        X = spec.exact_solution(x0, times, W)
        return schemes.TrajectoryOutput(times, np.asarray(X, float), "linear",
                                        None, "exact")
    cfg = schemes.SchemeConfig(ref, k_ref)
    return schemes.run(spec, cfg, path)


# ---------------------------------------------------------------------------
# Batch engine


def _metric_grid(metric, n_grid):
    if not metric.is_path:
        return None
    for n in n_grid:
        if metric.resolution % n:
            raise ValueError(f"resolution {metric.resolution} is not a "
                             f"multiple of n={n}")
    return metric.resolution


def _resolve_kref(spec, metric, n_grid, k_ref, factor):
    nmax = max(n_grid)
    R = _metric_grid(metric, n_grid) or nmax
    if schemes.reference_scheme(spec) == "exact":
        base = R
    else:
        base = max(R, factor * nmax)
    K = int(k_ref) if k_ref is not None else int(R * math.ceil(base / R))
    if K % R or any(K % n for n in n_grid):
        raise ValueError("k_ref must be a multiple of the metric grid and "
                         "of every n")
    if schemes.reference_scheme(spec) != "exact":
        if K < 16 * nmax:
            raise ValueError("k_ref must be at least 16 times the largest n")
        if metric.is_path and K < 2 * R:
            raise ValueError("k_ref must be at least twice the metric grid "
                             "so the reference can be halved")
    return K, R


def _path_errors(metric, D, T):
    """Per-replication error from differences ``D`` on a uniform grid."""
    A = np.abs(D)
    if metric.kind == "endpoint":
        return A[:, -1]
    if metric.kind == "sup" or metric.kind == "max_pointwise":
        return A.max(axis=1)
    h = T / (A.shape[1] - 1)
    Ap = A ** metric.p
    integral = h * (Ap.sum(axis=1) - 0.5 * (Ap[:, 0] + Ap[:, -1]))
    return integral ** (1.0 / metric.p)


def _approximation(spec, scheme, X, W_R, interpolation):
    if W_R is None:
        return X
    return schemes.dense_values(spec, scheme, X, W_R, interpolation)


@dataclass(frozen=True)
class _Job:
    scheme: str
    metric: ErrorMetric
    n_grid: tuple
    K: int
    R: int
    seed: int
    reps: tuple
    interpolation: str
    gate: bool
    quad_every: int


def _reference_batch(spec, x0, W, bridge):
    ref = schemes.reference_scheme(spec)
    return schemes.simulate_batch(spec, ref, x0, W,
                                  bridge if ref == "taylor15" else None)


def _run_chunk(spec, job: _Job):
    """Errors for one block of replications; pure in ``(spec, job)``."""
    reps = list(job.reps)
    T = spec.T
    ref = schemes.reference_scheme(spec)
    W = sample_grid(job.seed, reps, job.K, T)
    bridge = (sample_span_integrals(job.seed, reps, job.K, T)
              if ref == "taylor15" else None)
    x0 = sample_initial(spec, job.seed, reps)
    with np.errstate(all="ignore"):
        xref = _reference_batch(spec, x0, W, bridge)
    path = job.metric.is_path
    step = job.K // job.R if path else job.K
    W_R = W[:, ::job.K // job.R] if path else None
    ref_R = xref[:, ::step] if path else xref[:, [0, -1]]
    out = {"errors": {}, "pointwise": {}, "quad": {}}
    for n in job.n_grid:
        Wn = W[:, ::job.K // n]
        with np.errstate(all="ignore"):
            Xn = schemes.simulate_batch(spec, job.scheme, x0, Wn)
            approx = (_approximation(spec, job.scheme, Xn, W_R,
                                     job.interpolation) if path
                      else Xn[:, [0, -1]])
            D = ref_R - approx
        out["errors"][n] = _path_errors(job.metric, D, T)
        if path:
            out["pointwise"][n] = np.abs(D).sum(axis=0)
            rows = np.arange(0, len(reps), job.quad_every)
            if job.metric.kind != "max_pointwise" and job.R % (2 * n) == 0:
                coarse = _path_errors(job.metric, D[rows, ::2], T)
                out["quad"][n] = (out["errors"][n][rows], coarse)
    if job.gate and ref != "exact":
        half = None if bridge is None else aggregate_span_integrals(
            W, bridge, 2, T / job.K)
        with np.errstate(all="ignore"):
            xh = schemes.simulate_batch(
                spec, ref, x0, W[:, ::2],
                half if ref == "taylor15" else None)
        if path:
            D = ref_R - xh[:, ::step // 2]
        else:
            D = xref[:, [0, -1]] - xh[:, [0, -1]]
        out["gate"] = _path_errors(job.metric, D, T)
    return out


def _chunk_worker(args):
    spec, job = args
    return _run_chunk(spec, job)


def error_samples(spec: SdeSpec, scheme: str, metric: ErrorMetric,
                  n_grid: Sequence[int], M: int, seed: int = 0,
                  k_ref: Optional[int] = None,
                  kref_factor: int = DEFAULT_KREF_FACTOR,
                  interpolation: str = "linear", gate: bool = True,
                  jobs: int = 1, chunk: int = 512):
    """Per-replication errors for each ``n``; the raw material of reports.

    Returns a dict with ``errors[n]`` (shape (M,)), ``pointwise[n]`` (mean
    absolute error at each metric-grid node, path metrics only), ``gate``
    (reference at ``k_ref`` vs ``k_ref/2``), ``quad`` (relative change of
    the metric under halving the metric grid on 1% of replications) and the
    resolved grids.  Results do not depend on ``jobs``.
    """
    if M < 2:
        raise ValueError("M must be at least 2")
    n_grid = tuple(sorted(int(n) for n in n_grid))
    if scheme in schemes.REFERENCE_ONLY:
        raise ValueError(f"{scheme} is reference-only")
    schemes.check_scheme(spec, scheme)
    if interpolation == "continuous" and scheme not in schemes.CONTINUOUS:
        raise ValueError(f"{scheme} has no continuous-time form")
    K, R = _resolve_kref(spec, metric, n_grid, k_ref, kref_factor)
    quad_every = 100
    if metric.is_path:
        chunk = max(1, min(chunk, (1 << 23) // (K + 1)))
    jobs_list = [
        _Job(scheme, metric, n_grid, K, R, seed,
             tuple(range(s, min(M, s + chunk))), interpolation, gate,
             quad_every)
        for s in range(0, M, chunk)]
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_chunk_worker,
                                [(spec, j) for j in jobs_list]))
    else:
        parts = [_run_chunk(spec, j) for j in jobs_list]
    res = {"K": K, "R": R, "n_grid": n_grid, "errors": {}, "pointwise": {},
           "quad": {}, "gate": None}
    for n in n_grid:
        res["errors"][n] = np.concatenate([p["errors"][n] for p in parts])
        if metric.is_path:
            res["pointwise"][n] = sum(p["pointwise"][n] for p in parts) / M
            if all(n in p["quad"] for p in parts):
                fine = np.concatenate([p["quad"][n][0] for p in parts])
                coarse = np.concatenate([p["quad"][n][1] for p in parts])
                with np.errstate(all="ignore"):
                    rel = np.abs(coarse - fine) / np.maximum(fine, 1e-300)
                res["quad"][n] = float(np.max(rel)) if rel.size else 0.0
    if parts and "gate" in parts[0]:
        res["gate"] = np.concatenate([p["gate"] for p in parts])
    return res


def _estimate(metric, n, errs, pointwise):
    M = errs.size
    if metric.kind == "max_pointwise":
        pw = pointwise
        j = int(np.argmax(pw))
        return ErrorEstimate(n, float(pw[j]), math.nan, M, errs, pw)
    finite = np.isfinite(errs)
    mean = float(np.mean(errs)) if finite.all() else math.inf
    se = float(np.std(errs, ddof=1) / math.sqrt(M)) if finite.all() \
        else math.inf
    return ErrorEstimate(n, mean, se, M, errs, pointwise)


def mc_error(spec: SdeSpec, method_or_scheme, metric: ErrorMetric, n: int,
             M: int, seed: int = 0, k_ref: Optional[int] = None,
             interpolation: str = "linear", jobs: int = 1) -> ErrorEstimate:
    """Mean error of a scheme (by id) or an adaptive method, with its SE.

    Adaptive methods run path by path against a fresh PathState and are
    compared with the reference built afterwards on the same state.
    """
    if M < 100:
        raise ValueError("M must be at least 100")
    if isinstance(method_or_scheme, mf.AdaptiveMethod):
        return _method_error(spec, method_or_scheme, metric, n, M, seed,
                             k_ref)
    res = error_samples(spec, method_or_scheme, metric, [n], M, seed, k_ref,
                        interpolation=interpolation, gate=False, jobs=jobs)
    est = _estimate(metric, n, res["errors"][n], res["pointwise"].get(n))
    if metric.kind == "max_pointwise":
        j = int(np.argmax(est.pointwise_means))
        est.se = _pointwise_se(spec, method_or_scheme, metric, n, M, seed,
                               res, j, interpolation)
    return est


def _pointwise_se(spec, scheme, metric, n, M, seed, res, j, interpolation):
    # SE of the pointwise mean at the maximizing node, from a second pass
    K, R = res["K"], res["R"]
    vals = []
    for s in range(0, M, 512):
        reps = list(range(s, min(M, s + 512)))
        W = sample_grid(seed, reps, K, spec.T)
        ref = schemes.reference_scheme(spec)
        bridge = (sample_span_integrals(seed, reps, K, spec.T)
                  if ref == "taylor15" else None)
        x0 = sample_initial(spec, seed, reps)
        with np.errstate(all="ignore"):
            xref = _reference_batch(spec, x0, W, bridge)[:, ::K // R]
            Xn = schemes.simulate_batch(spec, scheme, x0, W[:, ::K // n])
            ap = _approximation(spec, scheme, Xn, W[:, ::K // R],
                                interpolation)
        vals.append(np.abs(xref[:, j] - ap[:, j]))
    v = np.concatenate(vals)
    return float(np.std(v, ddof=1) / math.sqrt(M))


def _method_error(spec, method, metric, n, M, seed, k_ref):
    R = metric.resolution if metric.is_path else 1
    K = k_ref or max(DEFAULT_KREF_FACTOR * method.budget, R)
    K = int(R * math.ceil(K / R))
    tR = grid_times(spec.T, R)
    errs = np.empty(M)
    pw = np.zeros(R + 1)
    step = K // R
    for r in range(M):
        path = PathState(seed, r)
        run = mf.run_method(method, spec, path)
        ref = reference_solution(spec, path, K)
        if metric.is_path:
            ap = np.array([run.output(t) for t in tR])
            D = (ref.values[::step] - ap)[None, :]
        else:
            D = np.array([[0.0, ref.endpoint - float(run.output)]])
        errs[r] = _path_errors(metric, D, spec.T)[0]
        if metric.is_path:
            pw += np.abs(D[0])
    est = _estimate(metric, n, errs, pw / M if metric.is_path else None)
    return est


# ---------------------------------------------------------------------------
# Rates


RATES = {
    "1/n": lambda n: 1.0 / n,
    "1/sqrt(n)": lambda n: 1.0 / math.sqrt(n),
    "sqrt(ln(n+1)/n)": lambda n: math.sqrt(math.log(n + 1.0) / n),
}


@dataclass(frozen=True)
class RateTarget:
    """Registered exponent with its acceptance band.

    ``log_power`` > 0 means the target is ``n**exponent * ln(n+1)**log_power``
    and the band applies to the log-corrected slope, which must also lower
    the residual sum of squares of the plain fit.  ``one_sided`` bands only
    bound the slope from below.
    """

    exponent: float
    band: tuple
    source: str
    log_power: float = 0.0
    one_sided: bool = False
    gate_enforced: bool = True


TARGETS = {
    "calibration_gbm_milstein_endpoint": RateTarget(
        -1.0, (-1.15, -0.85), "classical Milstein order for GBM"),
    "cir_endpoint_rate_one": RateTarget(
        -1.0, (-1.25, -0.75),
        "matching upper and lower endpoint bounds n^-1 for CIR with "
        "large dimension parameter"),
    "cir_endpoint_low_delta": RateTarget(
        None, (None, math.inf),
        "endpoint lower bound n^(-delta/2) for CIR with delta < 2; no "
        "implemented scheme attains it", one_sided=True,
        gate_enforced=False),
    "quintic_endpoint": RateTarget(
        -1.0, (-1.25, -0.75),
        "tamed Milstein upper bound n^-1 matching the endpoint lower bound"),
    "quintic_l1": RateTarget(
        -0.5, (-0.65, -0.35), "L1-path lower bound n^-1/2"),
    "quintic_sup": RateTarget(
        -0.5, (-0.65, -0.35), "sup-norm lower bound sqrt(ln(n+1)/n)",
        log_power=0.5),
    "sgn_drift_l1": RateTarget(
        -0.5, (-0.65, -0.35),
        "sharp L1-path rate n^-1/2 for the discontinuous sgn drift"),
}


def resolve_target(target_id: str, spec: SdeSpec) -> RateTarget:
    if target_id not in TARGETS:
        raise ValueError(f"unknown target {target_id!r}; "
                         f"choose from {sorted(TARGETS)}")
    t = TARGETS[target_id]
    if target_id == "cir_endpoint_low_delta":
        delta = float(spec.coeffs.params[0])
        if not delta < 2:
            raise ValueError("cir_endpoint_low_delta needs delta < 2")
        return RateTarget(-delta / 2.0, (-delta / 2.0 - 0.1, math.inf),
                          t.source, one_sided=True, gate_enforced=False)
    return t


@dataclass
class RateReport:
    name: str
    spec_name: str
    scheme: str
    metric: dict
    n_grid: list
    means: list
    ses: list
    slope: float
    slope_ci: tuple
    intercept: float
    r2: float
    target_exponent: float
    target_source: str
    band: tuple
    M: int
    seed: int
    runtime: float
    reference: str
    k_ref: int
    resolution: Optional[int]
    gate_ratio: Optional[float]
    gate_enforced: bool
    log_power: float = 0.0
    rss_plain: Optional[float] = None
    rss_corrected: Optional[float] = None
    corrected_slope: Optional[float] = None
    quadrature_check: dict = field(default_factory=dict)
    notes: str = ""
    config: dict = field(default_factory=dict)

    @property
    def gate_passed(self) -> bool:
        return self.gate_ratio is None or self.gate_ratio >= GATE_RATIO

    @property
    def slope_in_band(self) -> bool:
        s = self.corrected_slope if self.log_power else self.slope
        lo, hi = self.band
        return lo <= s <= hi

    @property
    def passed(self) -> bool:
        ok = self.slope_in_band
        if self.log_power:
            ok = ok and self.rss_corrected < self.rss_plain
        if self.gate_enforced:
            ok = ok and self.gate_passed
        return bool(ok)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gate_passed"] = self.gate_passed
        d["slope_in_band"] = self.slope_in_band
        d["passed"] = self.passed
        d["band"] = [None if not math.isfinite(b) else b for b in self.band]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_jsonable)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["n", "mean", "se", "M", "seed"])
        for n, m, s in zip(self.n_grid, self.means, self.ses):
            w.writerow([n, repr(m), repr(s), self.M, self.seed])
        return buf.getvalue()

    def to_dat(self) -> str:
        lines = [f"# {self.name}: n mean_error"]
        lines += [f"{n} {m!r}" for n, m in zip(self.n_grid, self.means)]
        return "\n".join(lines) + "\n"


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not math.isfinite(o):
        return None
    raise TypeError(f"cannot serialize {type(o)}")


def rate_experiment(spec: SdeSpec, scheme: str, metric: ErrorMetric,
                    n_grid: Sequence[int], M: int, seed: int = 0,
                    target: Optional[str] = None, band=None,
                    k_ref: Optional[int] = None,
                    kref_factor: int = DEFAULT_KREF_FACTOR,
                    interpolation: str = "linear", jobs: int = 1,
                    name: Optional[str] = None,
                    config: Optional[dict] = None) -> RateReport:
    """Mean errors over ``n_grid``, log-log slope and verdict.

    The reference is checked by comparing it with itself on half as many
    steps; the smallest measured error must exceed that gap by a factor of
    ``GATE_RATIO``.
    """
    n_grid = sorted(int(n) for n in n_grid)
    if len(n_grid) < 4:
        raise ValueError("n_grid needs at least four points")
    ratios = {n_grid[i + 1] / n_grid[i] for i in range(len(n_grid) - 1)}
    if max(ratios) - min(ratios) > 1e-9:
        raise ValueError("n_grid must be geometric")
    t0 = time.perf_counter()
    tgt = resolve_target(target, spec) if target else RateTarget(
        math.nan, band or (-math.inf, math.inf), "user band")
    if band is not None:
        tgt = RateTarget(tgt.exponent, tuple(band), tgt.source,
                         tgt.log_power, tgt.one_sided, tgt.gate_enforced)
    res = error_samples(spec, scheme, metric, n_grid, M, seed, k_ref,
                        kref_factor, interpolation, gate=True, jobs=jobs)
    ests = [_estimate(metric, n, res["errors"][n], res["pointwise"].get(n))
            for n in n_grid]
    means = [e.mean for e in ests]
    ses = [e.se for e in ests]
    fit = loglog_fit(n_grid, means)
    rss_c = corr = None
    if tgt.log_power:
        cf = loglog_fit(n_grid, means, log_correction=tgt.log_power)
        rss_c, corr = cf.rss, cf.slope
    gate_ratio = None
    ref = schemes.reference_scheme(spec)
    if res["gate"] is not None:
        g = float(np.mean(res["gate"])) if metric.kind != "max_pointwise" \
            else float(np.max(np.abs(res["gate"])))
        gate_ratio = min(means) / g if g > 0 else math.inf
    notes = []
    if not tgt.gate_enforced:
        notes.append("reference gate reported, not enforced")
    if tgt.one_sided:
        notes.append("lower-bound consistency only: the optimal upper "
                     "rate needs a scheme outside this package")
    return RateReport(
        name=name or target or f"{spec.name}_{scheme}_{metric.label()}",
        spec_name=spec.name, scheme=scheme,
        metric={"kind": metric.kind, "p": metric.p,
                "resolution": metric.resolution,
                "interpolation": interpolation},
        n_grid=n_grid, means=means, ses=ses, slope=fit.slope,
        slope_ci=tuple(fit.ci), intercept=fit.intercept, r2=fit.r2,
        target_exponent=tgt.exponent, target_source=tgt.source,
        band=tuple(tgt.band), M=M, seed=seed,
        runtime=time.perf_counter() - t0, reference=ref, k_ref=res["K"],
        resolution=res["R"] if metric.is_path else None,
        gate_ratio=gate_ratio, gate_enforced=tgt.gate_enforced,
        log_power=tgt.log_power, rss_plain=fit.rss if tgt.log_power else None,
        rss_corrected=rss_c, corrected_slope=corr,
        quadrature_check={str(k): v for k, v in res["quad"].items()},
        notes="; ".join(notes), config=dict(config or {}))


# ---------------------------------------------------------------------------
# Exceedance probabilities


@dataclass
class TailReport:
    n_grid: list
    thresholds: list
    estimates: list
    lower: list
    upper: list
    floor: float
    M: int
    rate: str

    @property
    def floor_positive(self) -> bool:
        return self.floor > 0.0

    def to_dict(self):
        return asdict(self) | {"floor_positive": self.floor_positive}


def probability_tail(spec: SdeSpec, scheme: str, metric: ErrorMetric,
                     c_over_rate: float, n_grid: Sequence[int], M: int,
                     rate: str = "1/n", seed: int = 0,
                     k_ref: Optional[int] = None,
                     interpolation: str = "linear", jobs: int = 1,
                     samples=None) -> TailReport:
    """Frequencies of ``error >= c * rate(n)`` with 95% Wilson intervals.

    The floor is the smallest lower Wilson bound over ``n``.  Pass the
    output of :func:`error_samples` as ``samples`` to reuse errors.
    """
    if rate not in RATES:
        raise ValueError(f"rate must be one of {sorted(RATES)}")
    if c_over_rate < 0:
        raise ValueError("c_over_rate must be non-negative")
    n_grid = sorted(int(n) for n in n_grid)
    if samples is None:
        samples = error_samples(spec, scheme, metric, n_grid, M, seed, k_ref,
                                interpolation=interpolation, gate=False,
                                jobs=jobs)
    th, est, lo, hi = [], [], [], []
    for n in n_grid:
        e = samples["errors"][n]
        thr = c_over_rate * RATES[rate](n)
        hits = int(np.sum(e >= thr))
        l, u = wilson_interval(hits, e.size)
        th.append(thr)
        est.append(hits / e.size)
        lo.append(l)
        hi.append(u)
    return TailReport(n_grid, th, est, lo, hi, float(min(lo)), M, rate)
