"""Sequential, cost-counted Brownian paths with exact bridge refinement.

Randomness is drawn from counter-based Philox streams keyed by
``(seed, replication, stream)``.  Stream 0 feeds path values, stream 1 feeds
span integrals (an auxiliary device that is never charged to ``nu``) and
stream 2 feeds random initial values.  The batch samplers below consume the
streams in the same order as a :class:`PathState` queried on the same grid,
so both produce bit-identical values.

Binary path dumps are consecutive little-endian float64 pairs ``(t, W(t))``
in increasing time order, starting with ``(0, 0)``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

STREAM_PATH = 0
STREAM_AUX = 1
STREAM_INITIAL = 2

_DUMP_DTYPE = np.dtype("<f8")


def make_rng(seed: int, rep: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(rep), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


def grid_times(T: float, k: int) -> np.ndarray:
    """Equidistant times ``T * l / k`` for ``l = 0..k``."""
    return T * np.arange(k + 1) / k


@dataclass(frozen=True)
class BridgeDraw:
    """Record of the last conditional draw made by a PathState."""

    span: tuple
    time: float
    value: float
    cond_mean: float
    cond_var: float
    given_integral: bool = False


class PathState:
    """One Brownian path, revealed point by point.

    ``nu`` counts :meth:`evaluate` requests, including repeats of stored
    knots.  Span integrals are cached per adjacent knot pair; when a new knot
    splits a span with a cached integral, the new value is drawn conditionally
    on that integral and the integral is split consistently between the two
    halves, so every revealed quantity keeps the Brownian joint law.
    """

    def __init__(self, seed: int = 0, rep: int = 0):
        self.seed = int(seed)
        self.rep = int(rep)
        self._rng = make_rng(seed, rep, STREAM_PATH)
        self._aux = make_rng(seed, rep, STREAM_AUX)
        self._init_rng = None
        self._times = [0.0]
        self._values = [0.0]
        self._integrals = {}
        self.nu = 0
        self.last_draw: Optional[BridgeDraw] = None

    @classmethod
    def from_knots(cls, times, values, seed: int = 0, rep: int = 0):
        """Path preloaded with knots (for replaying a dumped path)."""
        times = [float(t) for t in times]
        values = [float(v) for v in values]
        if not times or times[0] != 0.0 or values[0] != 0.0:
            raise ValueError("knots must start with (0, 0)")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("knot times must be strictly increasing")
        st = cls(seed, rep)
        st._times = times
        st._values = values
        return st

    @property
    def initial_rng(self) -> np.random.Generator:
        if self._init_rng is None:
            self._init_rng = make_rng(self.seed, self.rep, STREAM_INITIAL)
        return self._init_rng

    @property
    def knots(self):
        return np.array(self._times), np.array(self._values)

    def cost(self) -> int:
        return self.nu

    def evaluate(self, t: float) -> float:
        """Return ``W(t)``, sampling it from the exact conditional law."""
        t = float(t)
        if not (t >= 0.0) or math.isinf(t):
            raise ValueError(f"evaluation time must be finite and >= 0, got {t}")
        times = self._times
        idx = bisect.bisect_left(times, t)
        if idx < len(times) and times[idx] == t:
            self.nu += 1
            return self._values[idx]
        z = float(self._rng.standard_normal())
        if idx == len(times):
            last_t = times[-1]
            last_w = self._values[-1]
            var = t - last_t
            value = last_w + z * math.sqrt(var)
            times.append(t)
            self._values.append(value)
            self.last_draw = BridgeDraw((last_t, math.inf), t, value, last_w,
                                        var)
        else:
            value = self._refine(idx, t, z)
        self.nu += 1
        return value

    def _refine(self, idx, t, z):
        times, values = self._times, self._values
        s1, s2 = times[idx - 1], times[idx]
        w1, w2 = values[idx - 1], values[idx]
        h = s2 - s1
        u = t - s1
        v = s2 - t
        chord = w1 + u / h * (w2 - w1)
        cached = self._integrals.pop(s1, None)
        if cached is None:
            dev_mean = 0.0
            dev_var = u * v / h
        else:
            integral = cached[1]
            dev_mean = 6.0 * u * v / (h * h * h) * integral
            dev_var = u * v / h - 3.0 * u * u * v * v / (h * h * h)
            dev_var = max(dev_var, 0.0)
        dev = dev_mean + z * math.sqrt(dev_var)
        value = chord + dev
        times.insert(idx, t)
        values.insert(idx, value)
        if cached is not None:
            # Remaining mass split between the halves given their sum.
            rest = cached[1] - 0.5 * h * dev
            vl = u * u * u / 12.0
            vr = v * v * v / 12.0
            zi = float(self._aux.standard_normal())
            left = rest * vl / (vl + vr) + zi * math.sqrt(vl * vr / (vl + vr))
            self._integrals[s1] = (t, left)
            self._integrals[t] = (s2, rest - left)
        self.last_draw = BridgeDraw((s1, s2), t, value, chord + dev_mean,
                                    dev_var, cached is not None)
        return value

    def span_time_integral(self, s1: float, s2: float) -> float:
        """Realised ``int_{s1}^{s2} (W(t) - chord(t)) dt`` over adjacent knots.

        The chord is the straight line between the two knot values, so the
        integral is independent of the knots with variance ``h**3 / 12``.
        Add ``h * (W(s2) - W(s1)) / 2`` to obtain ``int (W - W(s1)) dt``.
        Draws are cached and never change ``nu``.
        """
        s1 = float(s1)
        s2 = float(s2)
        times = self._times
        idx = bisect.bisect_left(times, s1)
        if (idx >= len(times) - 1 or times[idx] != s1
                or times[idx + 1] != s2):
            raise ValueError(f"({s1}, {s2}) are not adjacent knots")
        hit = self._integrals.get(s1)
        if hit is not None:
            return hit[1]
        h = s2 - s1
        value = float(self._aux.standard_normal()) * math.sqrt(h * h * h / 12.0)
        self._integrals[s1] = (s2, value)
        return value

    def dump(self, fh) -> None:
        """Write knots as little-endian float64 ``(t, W(t))`` pairs."""
        t, w = self.knots
        np.column_stack([t, w]).astype(_DUMP_DTYPE).tofile(fh)


def load_path(fh, seed: int = 0, rep: int = 0) -> PathState:
    data = np.fromfile(fh, dtype=_DUMP_DTYPE)
    if data.size % 2:
        raise ValueError("path dump must contain (t, value) pairs")
    data = data.reshape(-1, 2)
    return PathState.from_knots(data[:, 0], data[:, 1], seed, rep)


def sample_grid(seed: int, reps, k: int, T: float = 1.0) -> np.ndarray:
    """``W`` on ``grid_times(T, k)`` for each replication index in ``reps``.

    ``reps`` is an int (indices ``0..reps-1``) or an iterable of indices.
    Bit-identical to evaluating a fresh PathState at the grid in order.
    """
    reps = range(reps) if isinstance(reps, (int, np.integer)) else reps
    reps = list(reps)
    t = grid_times(T, k)
    sd = np.sqrt(np.diff(t))
    inc = np.empty((len(reps), k + 1))
    inc[:, 0] = 0.0
    for row, r in enumerate(reps):
        inc[row, 1:] = make_rng(seed, r, STREAM_PATH).standard_normal(k) * sd
    return np.cumsum(inc, axis=1)


def sample_span_integrals(seed: int, reps, k: int, T: float = 1.0):
    """Bridge integrals on the spans of ``grid_times(T, k)``, shape (R, k).

    Matches PathState.span_time_integral called on the grid spans in order.
    """
    reps = range(reps) if isinstance(reps, (int, np.integer)) else reps
    reps = list(reps)
    t = grid_times(T, k)
    h = np.diff(t)
    sd = np.sqrt(h * h * h / 12.0)
    out = np.empty((len(reps), k))
    for row, r in enumerate(reps):
        out[row] = make_rng(seed, r, STREAM_AUX).standard_normal(k) * sd
    return out


def sample_initial(spec, seed: int, reps):
    """Initial values per replication, drawn from stream 2 when random."""
    reps = range(reps) if isinstance(reps, (int, np.integer)) else reps
    reps = list(reps)
    if spec.x0 is not None:
        return np.full(len(reps), float(spec.x0))
    return np.array([float(spec.initial_values(
        make_rng(seed, r, STREAM_INITIAL), 1)[0]) for r in reps])


def aggregate_span_integrals(W_fine, bridge_fine, factor, h_fine):
    """Coarse ``int (W - W(t_l)) dt`` from a fine grid refined by ``factor``.

    ``bridge_fine`` are fine bridge integrals; the fine integral of
    ``W - W(s_j)`` is ``h_fine * dW_j / 2 + bridge_j`` and the offset
    ``W(s_j) - W(t_l)`` contributes ``h_fine`` times itself.
    """
    reps, kf1 = W_fine.shape
    kf = kf1 - 1
    k = kf // factor
    dW = np.diff(W_fine, axis=1)
    local = 0.5 * h_fine * dW + bridge_fine
    left = W_fine[:, :-1].reshape(reps, k, factor)
    base = W_fine[:, :-1:factor][:, :, None]
    off = (left - base) * h_fine
    return (local.reshape(reps, k, factor) + off).sum(axis=2)
