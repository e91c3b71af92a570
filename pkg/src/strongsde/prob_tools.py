"""Gaussian tail checks and shared statistics (Wilson intervals, log-log fits).

Every check returns an estimate with its standard error and passes when the
estimate reaches the target probability ``1 - eps`` up to ``3 * SE``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

__all__ = [
    "CheckResult", "FitResult", "wilson_interval", "anderson_tail_check",
    "max_abs_normal_check", "sum_abs_normal_check", "bridge_l1_check",
    "bridge_l1_statistics", "largest_passing_constant", "bridge_l1_mean",
    "loglog_fit", "ks_two_sample",
]


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    estimate: float
    se: float
    target: float
    detail: str = ""


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r2: float
    ci: tuple
    rss: float
    log_correction: float = 0.0


def _rng(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _verdict(hits, eps, detail=""):
    m = hits.size
    p = float(hits.mean())
    se = math.sqrt(max(p * (1.0 - p), 0.0) / m)
    target = 1.0 - eps
    return CheckResult(p >= target - 3.0 * se, p, se, target, detail)


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054):
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    den = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    half /= den
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


def anderson_tail_check(mu: float, sigma: float, eps: float,
                        sigma0: Optional[float] = None, M: int = 10 ** 4,
                        seed: int = 0) -> CheckResult:
    """``P(|Z| >= eps * sigma0) >= 1 - eps`` for ``Z ~ N(mu, sigma**2)``.

    ``sigma0`` defaults to ``sigma``; it must not exceed ``sigma``.
    """
    sigma0 = sigma if sigma0 is None else sigma0
    if not (0 < sigma0 <= sigma):
        raise ValueError("need 0 < sigma0 <= sigma")
    if not (0 < eps < 1):
        raise ValueError("eps must lie in (0, 1)")
    if M < 1000:
        raise ValueError("M must be at least 1000")
    z = mu + sigma * _rng(seed).standard_normal(M)
    return _verdict(np.abs(z) >= eps * sigma0, eps,
                    f"mu={mu} sigma={sigma} sigma0={sigma0} eps={eps}")


def _normal_block(N, delta, M, seed, means=None, sds=None):
    rng = _rng(seed)
    means = np.zeros(N) if means is None else np.asarray(means, float)
    sds = np.full(N, float(delta)) if sds is None else np.asarray(sds, float)
    if np.any(sds < delta):
        raise ValueError("standard deviations must be at least delta")
    return means + sds * rng.standard_normal((M, N))


def max_abs_normal_check(N: int, delta: float, c: float, eps: float,
                         M: int = 10 ** 4, seed: int = 0, means=None,
                         sds=None) -> CheckResult:
    """``P(max_i |Z_i| >= c sqrt(ln N)) >= 1 - eps`` for independent normals.

    Means default to 0 and standard deviations to ``delta`` (the hardest
    case); other choices can be supplied as long as every sd is >= delta.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    z = _normal_block(N, delta, M, seed, means, sds)
    stat = np.abs(z).max(axis=1)
    return _verdict(stat >= c * math.sqrt(math.log(N)), eps,
                    f"N={N} c={c} delta={delta}")


def sum_abs_normal_check(N: int, delta: float, c: float, eps: float,
                         M: int = 10 ** 4, seed: int = 0, means=None,
                         sds=None) -> CheckResult:
    """``P(sum_i |Z_i| >= c N) >= 1 - eps`` for independent normals."""
    if N < 1:
        raise ValueError("N must be positive")
    z = _normal_block(N, delta, M, seed, means, sds)
    stat = np.abs(z).sum(axis=1)
    return _verdict(stat >= c * N, eps, f"N={N} c={c} delta={delta}")


def _bridges(rng, M, count, k, sub):
    """Brownian bridges on ``[0, 1/k]`` at ``sub + 1`` equidistant points."""
    h = 1.0 / (k * sub)
    inc = rng.standard_normal((M, count, sub)) * math.sqrt(h)
    w = np.concatenate([np.zeros((M, count, 1)), np.cumsum(inc, axis=2)],
                       axis=2)
    frac = np.arange(sub + 1) / sub
    return w - w[..., -1:] * frac


def _trapezoid_l1(y, k, sub):
    h = 1.0 / (k * sub)
    a = np.abs(y)
    return h * (a.sum(axis=-1) - 0.5 * (a[..., 0] + a[..., -1]))


def bridge_l1_statistics(k: int, M: int = 10 ** 4, seed: int = 0,
                         a=None, f=None, subpoints: int = 64) -> np.ndarray:
    """Samples of ``sum_i ||a_i B_i - f_i||_1`` over ``k/2`` bridges.

    ``f`` is None (zero), an array of shape (k/2, subpoints+1) fixed for all
    samples, or the string ``"adversarial"`` meaning ``f_i = a_i B_i``.
    """
    if k < 2 or k % 2:
        raise ValueError("k must be even and positive")
    count = k // 2
    rng = _rng(seed)
    aa = np.ones(count) if a is None else np.asarray(a, float)
    b = _bridges(rng, M, count, k, subpoints) * aa[None, :, None]
    if isinstance(f, str):
        if f != "adversarial":
            raise ValueError("unknown f option")
        dev = b - b
    elif f is None:
        dev = b
    else:
        dev = b - np.asarray(f, float)[None]
    return _trapezoid_l1(dev, k, subpoints).sum(axis=1)


def bridge_l1_check(k: int, delta: float, c: float, eps: float,
                    M: int = 10 ** 4, seed: int = 0, a=None, f=None,
                    subpoints: int = 64) -> CheckResult:
    """``P(sum_i ||a_i B_i - f_i||_1 >= c / sqrt(k/2)) >= 1 - eps``.

    Bridges live on spans of length ``1/k``; norms use the composite
    trapezoid rule on ``subpoints`` intervals per span.
    """
    count = k // 2
    aa = np.full(count, float(delta)) if a is None else np.asarray(a, float)
    if np.any(np.abs(aa) < delta):
        raise ValueError("all |a_i| must be at least delta")
    stat = bridge_l1_statistics(k, M, seed, aa, f, subpoints)
    return _verdict(stat >= c / math.sqrt(count), eps,
                    f"k={k} c={c} delta={delta}")


def bridge_l1_mean(k: int, subpoints: int = 64) -> float:
    """``E ||B||_1`` for one bridge on ``[0, 1/k]`` by trapezoid quadrature.

    Uses ``E|B(t)| = sqrt(2 v / pi)`` with ``v = t (1/k - t) k``.
    """
    t = np.linspace(0.0, 1.0 / k, subpoints + 1)
    v = t * (1.0 / k - t) * k
    g = np.sqrt(2.0 * v / math.pi)
    h = 1.0 / (k * subpoints)
    return float(h * (g.sum() - 0.5 * (g[0] + g[-1])))


def largest_passing_constant(check, grid: Sequence[float], **kwargs):
    """Largest ``c`` in ``grid`` for which ``check(c=c, **kwargs)`` passes.

    Returns ``(c, result)`` or ``(None, None)`` if nothing passes.
    """
    best = (None, None)
    for c in sorted(grid):
        res = check(c=c, **kwargs)
        if res.passed:
            best = (c, res)
    return best


def loglog_fit(n, err, weights=None, log_correction: float = 0.0,
               level: float = 0.95) -> FitResult:
    """Weighted least squares of ``ln err`` on ``ln n``.

    With ``log_correction = g`` the response is
    ``ln err - g * ln ln(n + 1)``, i.e. the model ``err ~ C n^s (ln(n+1))^g``.
    The slope interval uses Student's t with ``len(n) - 2`` degrees of
    freedom.
    """
    n = np.asarray(n, dtype=float)
    err = np.asarray(err, dtype=float)
    if n.shape != err.shape or n.size < 3:
        raise ValueError("need at least three (n, err) pairs")
    if np.any(n <= 0) or np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise ValueError("n and err must be positive and finite")
    w = np.ones_like(n) if weights is None else np.asarray(weights, float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    x = np.log(n)
    y = np.log(err)
    if log_correction:
        y = y - log_correction * np.log(np.log(n + 1.0))
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    dx = x - xm
    sxx = (w * dx * dx).sum()
    slope = (w * dx * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    resid = y - intercept - slope * x
    rss = float((w * resid * resid).sum())
    tss = float((w * (y - ym) ** 2).sum())
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    dof = n.size - 2
    if dof > 0:
        s2 = rss / dof
        se = math.sqrt(s2 / sxx)
        q = stats.t.ppf(0.5 + level / 2.0, dof)
        ci = (slope - q * se, slope + q * se)
    else:
        ci = (math.nan, math.nan)
    return FitResult(float(slope), float(intercept), float(r2), ci, rss,
                     float(log_correction))


def ks_two_sample(x, y):
    """Kolmogorov-Smirnov statistic and p-value for two samples."""
    res = stats.ks_2samp(np.asarray(x), np.asarray(y))
    return float(res.statistic), float(res.pvalue)
