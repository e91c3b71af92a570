"""Coupling an equation with its localized version on one Brownian path.

Exits are detected at grid nodes only.  While every iterate that feeds a
step lies in the interval where the two coefficient sets coincide, both
schemes evaluate the same expression on the same increments, so their
iterates agree bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _bump, schemes
from .brownian import PathState, sample_grid, sample_initial
from .prob_tools import wilson_interval
from .sde_model import SdeSpec

__all__ = [
    "CouplingResult", "CouplingBatch", "coupled_simulate", "coupled_batch",
    "stay_probability", "StayEstimate", "bitwise_equal",
]


def bitwise_equal(x, y) -> np.ndarray:
    """Elementwise identity of the IEEE bit patterns."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    return x.view(np.int64) == y.view(np.int64)


def _inside(x, I):
    lo, hi = I
    with np.errstate(invalid="ignore"):
        return (x > lo) & (x < hi)


def _first_false(mask):
    """Index of the first False along the last axis, or its length."""
    n = mask.shape[-1]
    bad = ~mask
    return np.where(bad.any(axis=-1), bad.argmax(axis=-1), n)


def _config(scheme_config):
    if isinstance(scheme_config, tuple) and len(scheme_config) == 2 and all(
            isinstance(c, schemes.SchemeConfig) for c in scheme_config):
        c1, c2 = scheme_config
        if (c1.scheme_id, c1.k) != (c2.scheme_id, c2.k):
            raise ValueError("coupled runs need the same scheme and grid")
        return c1
    if not isinstance(scheme_config, schemes.SchemeConfig):
        raise TypeError("scheme_config must be a SchemeConfig")
    return scheme_config


def _check_window(localized, I):
    rec = localized.recipe
    if rec is None or rec[0] != "localize":
        return
    l3, r3 = rec[2][2]
    if not (l3 <= I[0] and I[1] <= r3):
        raise ValueError(f"I={I} must lie in the closure of I3=({l3}, {r3})")


@dataclass
class CouplingResult:
    times: np.ndarray
    original: np.ndarray
    localized: np.ndarray
    exit_index: int
    agreed_through: int

    @property
    def k(self):
        return len(self.times) - 1

    @property
    def stayed(self) -> bool:
        return self.exit_index > self.k

    @property
    def full_agreement(self) -> bool:
        return self.agreed_through == self.k


def _coupling_indices(X, Y, I):
    inside = _inside(X, I) & _inside(Y, I)
    exit_index = _first_false(inside)
    agreed_through = _first_false(bitwise_equal(X, Y)) - 1
    return exit_index, agreed_through


def coupled_simulate(spec: SdeSpec, localized_spec: SdeSpec, I,
                     scheme_config, path: PathState,
                     x0: Optional[float] = None) -> CouplingResult:
    """Run one scheme for both equations on ``path``.

    ``exit_index`` is the first node where either trajectory is outside the
    open interval ``I`` (``k + 1`` if none); ``agreed_through`` is the last
    node of the leading run of bitwise agreement (``-1`` if ``X(0)`` already
    differs).
    """
    cfg = _config(scheme_config)
    I = (float(I[0]), float(I[1]))
    _check_window(localized_spec, I)
    x0 = schemes.initial_value(spec, path) if x0 is None else x0
    with np.errstate(all="ignore"):
        a = schemes.run(spec, cfg, path, x0=x0)
        b = schemes.run(localized_spec, cfg, path, x0=x0)
    e, g = _coupling_indices(a.values, b.values, I)
    return CouplingResult(a.times, a.values, b.values, int(e), int(g))


_ROUNDING = 1e-12


def _cutoffs_flat(localized, I, X):
    """Per path: at every node ``0..k-1`` outside ``I`` the cut-offs are
    within ``_ROUNDING`` of ``eta1 = 1`` and ``eta2 = 0``, so the localized
    coefficients differ from the original ones only at rounding level."""
    rec = localized.recipe
    if rec is None or rec[0] != "localize":
        return np.ones(X.shape[0], dtype=bool)
    (l1, r1), (l2, r2), (l3, r3) = rec[2]
    xl = X[:, :-1]
    with np.errstate(all="ignore"):
        eta1 = _bump.plateau_derivs(xl, l1, l2, r2, r1)[0]
        eta2 = 1.0 - _bump.plateau_derivs(xl, l2, l3, r3, r2)[0]
        ok = (np.abs(eta1 - 1.0) <= _ROUNDING) & (np.abs(eta2) <= _ROUNDING)
    return np.all(ok | _inside(xl, I), axis=1)


@dataclass
class CouplingBatch:
    exit_index: np.ndarray
    agreed_through: np.ndarray
    k: int
    seed: int
    cutoffs_flat: Optional[np.ndarray] = None

    @property
    def stayed(self):
        return self.exit_index > self.k

    @property
    def full_agreement(self):
        return self.agreed_through == self.k

    def counts(self) -> dict:
        st, fa = self.stayed, self.full_agreement
        return {
            "paths": int(st.size),
            "agree_through_exit_minus_one": int(
                np.sum(self.agreed_through >= self.exit_index - 1)),
            "stayed": int(st.sum()),
            "full_agreement": int(fa.sum()),
            "stayed_and_full_agreement": int((st & fa).sum()),
            "full_agreement_exit_at_last_node": int(
                (fa & ~st & (self.exit_index == self.k)).sum()),
            "full_agreement_unexplained": int(self.unexplained().sum()),
        }

    def unexplained(self):
        """Exited paths that still agree fully for no identifiable reason.

        An exit is explained when it happens at the last node (no step reads
        it) or when every node read by a step lies in ``I`` or in the band
        where both cut-offs lie within 1e-12 of 1 and 0, so coefficient
        differences vanish in the rounding of the update.
        """
        odd = self.full_agreement & ~self.stayed & (self.exit_index < self.k)
        if self.cutoffs_flat is not None:
            odd &= ~self.cutoffs_flat
        return odd

    def to_csv(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(["replication", "exit_index", "agreed_through", "stayed"])
        for r in range(self.exit_index.size):
            w.writerow([r, int(self.exit_index[r]),
                        int(self.agreed_through[r]), int(self.stayed[r])])


def coupled_batch(spec: SdeSpec, localized_spec: SdeSpec, I, scheme: str,
                  k: int, M: int, seed: int = 0,
                  chunk: int = 1024) -> CouplingBatch:
    """Vectorized :func:`coupled_simulate` over replications ``0..M-1``."""
    I = (float(I[0]), float(I[1]))
    _check_window(localized_spec, I)
    schemes.SchemeConfig(scheme, k)
    ex, ag, cm = [], [], []
    for start in range(0, M, chunk):
        reps = range(start, min(M, start + chunk))
        W = sample_grid(seed, reps, k, spec.T)
        x0 = sample_initial(spec, seed, reps)
        with np.errstate(all="ignore"):
            X = schemes.simulate_batch(spec, scheme, x0, W)
            Y = schemes.simulate_batch(localized_spec, scheme, x0, W)
        e, g = _coupling_indices(X, Y, I)
        ex.append(e)
        ag.append(g)
        cm.append(_cutoffs_flat(localized_spec, I, X))
    return CouplingBatch(np.concatenate(ex), np.concatenate(ag), k, seed,
                         np.concatenate(cm))


@dataclass(frozen=True)
class StayEstimate:
    estimate: float
    lower: float
    upper: float
    stayed: int
    replications: int


def stay_probability(spec: SdeSpec, I, S: float, scheme_config, M: int,
                     seed: int = 0, chunk: int = 4096) -> StayEstimate:
    """Fraction of paths whose grid values up to time ``S`` stay in ``I``.

    The interval is the 95% Wilson score interval.
    """
    if M < 100:
        raise ValueError("M must be at least 100")
    cfg = _config(scheme_config)
    if not (0 <= S <= spec.T):
        raise ValueError("S must lie in [0, T]")
    lo, hi = float(I[0]), float(I[1])
    last = int(math.floor(S * cfg.k / spec.T + 1e-9))
    hits = 0
    for start in range(0, M, chunk):
        reps = range(start, min(M, start + chunk))
        W = sample_grid(seed, reps, cfg.k, spec.T)
        x0 = sample_initial(spec, seed, reps)
        with np.errstate(all="ignore"):
            X = schemes.simulate_batch(spec, cfg.scheme_id, x0, W)
        hits += int(np.all(_inside(X[:, :last + 1], (lo, hi)), axis=1).sum())
    lower, upper = wilson_interval(hits, M)
    return StayEstimate(hits / M, lower, upper, hits, M)
