"""Reflected continuous-time lattice walk and its local-time field.

The walk lives on levels ``k / r``, ``k >= 0``.  In unscaled time it waits an
``Exp(1)`` holding time and then steps to a uniformly chosen neighbour; at 0 it
always steps up.  The embedded chain is ``|x0 + S_n|`` for a simple random walk
``S``.  Time is scaled diffusively: ``Y(s) = X(r^2 s) / r``.

The local time at level ``k/r`` is ``r`` times the scaled time spent there, so
``sum_k l^{k/r}_s / r = s`` holds exactly.

Walks are generated in blocks of one unit of scaled time, each block from its
own derived stream, so a walk sampled up to ``S`` is a prefix of the same walk
sampled up to any ``S' > S``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .rng import StreamKey, as_key, derive, stream

BLOCK = 1.0


class DegenerateField(ValueError):
    pass


def _sample_block(gen: np.random.Generator, r: int, start_level: int, duration: float):
    rate = float(r) * r
    expected = rate * duration
    n = int(expected + 8.0 * math.sqrt(expected) + 32)
    hold = gen.exponential(1.0 / rate, n)
    steps = gen.integers(0, 2, n, dtype=np.int64) * 2 - 1
    jumps = np.cumsum(hold)
    while jumps[-1] < duration:
        more = gen.exponential(1.0 / rate, n)
        hold = np.concatenate([hold, more])
        steps = np.concatenate([steps, gen.integers(0, 2, n, dtype=np.int64) * 2 - 1])
        jumps = np.cumsum(hold)
    m = int(np.searchsorted(jumps, duration, side="left"))
    jumps = jumps[:m]
    levels = np.abs(start_level + np.concatenate([[0], np.cumsum(steps[:m])]))
    return jumps, levels


@dataclass
class WalkPath:
    """Piecewise-constant walk: level ``sites[i]`` on ``[times[i], times[i+1])``.

    ``times[0] = 0`` and the last interval ends at ``horizon``.  ``sites`` are
    integer lattice indices; the level is ``sites / r``.
    """

    r: int
    times: np.ndarray
    sites: np.ndarray
    horizon: float
    key: StreamKey | None = None
    x0: int = 0

    @property
    def n_jumps(self) -> int:
        return self.times.size - 1

    @cached_property
    def durations(self) -> np.ndarray:
        return np.diff(np.append(self.times, self.horizon))

    @property
    def levels(self) -> np.ndarray:
        return self.sites / self.r

    def level_at(self, s):
        """Right-continuous level at time(s) ``s``."""
        idx = np.searchsorted(self.times, s, side="right") - 1
        return self.sites[idx] / self.r

    def extend(self, horizon: float) -> "WalkPath":
        if horizon <= self.horizon:
            return self
        if self.key is None:
            raise ValueError("only key-seeded walks can be extended")
        return sample_walk(self.r, horizon, self.x0, self.key)

    def restrict(self, horizon: float) -> "WalkPath":
        """Prefix of the walk on ``[0, horizon]``."""
        if horizon > self.horizon:
            raise ValueError("cannot restrict beyond the horizon")
        m = int(np.searchsorted(self.times, horizon, side="left"))
        m = max(m, 1)
        return WalkPath(self.r, self.times[:m], self.sites[:m], horizon, self.key, self.x0)

    def shifted(self, s: float) -> "WalkPath":
        """The walk restarted at time ``s`` (``theta_s``), on ``[0, horizon - s]``."""
        if not 0 <= s < self.horizon:
            raise ValueError("shift outside the horizon")
        i = int(np.searchsorted(self.times, s, side="right")) - 1
        times = np.concatenate([[0.0], self.times[i + 1:] - s])
        return WalkPath(self.r, times, self.sites[i:].copy(), self.horizon - s, None,
                        int(self.sites[i]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "level"])
            for a, b in zip(self.times, self.levels):
                w.writerow([f"{a:.17g}", f"{b:.17g}"])


def sample_walk(r: int, S: float, x0: float = 0.0, rng=0) -> WalkPath:
    """Reflected walk on ``(1/r) Z_+`` over scaled time ``[0, S]``.

    ``x0`` is a level on the grid (``x0 * r`` must be an integer).
    """
    if int(r) != r or r < 1:
        raise ValueError(f"grid parameter must be an integer >= 1, got {r}")
    r = int(r)
    if not S > 0:
        raise ValueError(f"horizon must be positive, got {S}")
    k0 = x0 * r
    if x0 < 0 or abs(k0 - round(k0)) > 1e-9:
        raise ValueError(f"start level {x0} is not a nonnegative multiple of 1/{r}")
    k0 = int(round(k0))
    if isinstance(rng, np.random.Generator):
        jumps, levels = _sample_block(rng, r, k0, S)
        return WalkPath(r, np.concatenate([[0.0], jumps]), levels, float(S), None, k0)
    key = as_key(rng)
    times = [np.zeros(1)]
    sites = []
    level = k0
    n_blocks = int(math.ceil(S / BLOCK))
    for b in range(n_blocks):
        jumps, levels = _sample_block(stream(derive(key, "walk-block", b)), r, level, BLOCK)
        sites.append(levels)
        times.append(b * BLOCK + jumps)
        times.append(np.array([(b + 1) * BLOCK]))
        level = int(levels[-1])
    times = np.concatenate(times)[:-1]
    sites = np.concatenate(sites)
    # block boundaries restart the exponential clock without moving: merge them
    keep = np.concatenate([[True], sites[1:] != sites[:-1]])
    times, sites = times[keep], sites[keep]
    m = int(np.searchsorted(times, S, side="left"))
    return WalkPath(r, times[:m], sites[:m], float(S), key, k0)


class LocalTimeField:
    """Exact local-time field ``l^{k/r}_s = r * (time at level k before s)``."""

    def __init__(self, walk: WalkPath):
        self.walk = walk
        self.r = walk.r
        self.horizon = walk.horizon
        dur = walk.durations
        sites = walk.sites
        order = np.argsort(sites, kind="stable")
        self._order = order
        counts = np.bincount(sites)
        self._ptr = np.concatenate([[0], np.cumsum(counts)])
        self._starts = walk.times[order]
        self._dur = dur[order]
        excl = np.cumsum(self._dur) - self._dur
        nonempty = counts > 0
        base = np.zeros(counts.size)
        base[nonempty] = excl[self._ptr[:-1][nonempty]]
        # cumulative time at the level before each of its intervals
        self._before = excl - np.repeat(base, counts)
        self.max_level = counts.size - 1

    def level_intervals(self, k: int):
        """``(starts, durations, time-before)`` of the intervals spent at level ``k``."""
        if k < 0 or k > self.max_level:
            e = np.empty(0)
            return e, e, e
        lo, hi = self._ptr[k], self._ptr[k + 1]
        return self._starts[lo:hi], self._dur[lo:hi], self._before[lo:hi]

    def at_level(self, k: int, s):
        """``l^{k/r}_s`` for integer level ``k``, vectorised over ``s``."""
        s = np.asarray(s, dtype=float)
        starts, dur, before = self.level_intervals(k)
        if starts.size == 0:
            return np.zeros_like(s)
        j = np.searchsorted(starts, s, side="right") - 1
        jj = np.maximum(j, 0)
        val = before[jj] + np.clip(s - starts[jj], 0.0, dur[jj])
        return np.where(j >= 0, self.r * val, 0.0)

    def totals(self, t: float | None = None) -> np.ndarray:
        """``l^{k/r}_t`` for every level ``k = 0..max_level``."""
        walk = self.walk
        if t is None or t >= self.horizon:
            dur = walk.durations
        else:
            dur = np.clip(t - walk.times, 0.0, walk.durations)
        return self.r * np.bincount(walk.sites, weights=dur, minlength=self.max_level + 1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "breakpoint_time", "local_time"])
            for k in range(self.max_level + 1):
                starts, dur, before = self.level_intervals(k)
                for a, d, b in zip(starts, dur, before):
                    w.writerow([f"{k / self.r:.17g}", f"{a:.17g}", f"{self.r * b:.17g}"])
                    w.writerow([f"{k / self.r:.17g}", f"{a + d:.17g}", f"{self.r * (b + d):.17g}"])


def local_time_field(walk: WalkPath) -> LocalTimeField:
    return LocalTimeField(walk)


def interpolation_weights(a: float, r: int) -> tuple[tuple[int, float], tuple[int, float]]:
    """Grid levels and linear weights representing the off-grid point ``a``."""
    x = a * r
    k = math.floor(x)
    frac = x - k
    if frac < 1e-12:
        return (k, 1.0), (k + 1, 0.0)
    if frac > 1 - 1e-12:
        return (k + 1, 1.0), (k + 2, 0.0)
    return (k, 1.0 - frac), (k + 1, frac)


def evaluate_local_time(field: LocalTimeField, a: float, s):
    """Local time at an arbitrary level ``a >= 0`` by linear interpolation."""
    if a < 0:
        raise ValueError("level must be nonnegative")
    (k0, w0), (k1, w1) = interpolation_weights(a, field.r)
    out = w0 * field.at_level(k0, s)
    if w1:
        out = out + w1 * field.at_level(k1, s)
    return out


def sup_local_time(field: LocalTimeField, t: float | None = None) -> float:
    """``max_a l^a_t`` (maximum over grid levels; interpolation cannot exceed it)."""
    t = field.horizon if t is None else t
    if t > field.horizon + 1e-12:
        raise ValueError("t beyond the walk horizon")
    return float(field.totals(t).max())


def sup_pair_difference(field: LocalTimeField, k: int, m: int, t: float | None = None) -> float:
    """``sup_{s <= t} |l^{k/r}_s - l^{(k+m)/r}_s|``."""
    t = field.horizon if t is None else t
    if isinstance(field, StubField):
        return float(abs(field.at_level(k, t) - field.at_level(k + m, t)))
    sa, da, _ = field.level_intervals(k)
    sb, db, _ = field.level_intervals(k + m)
    starts = np.concatenate([sa, sb])
    dur = np.concatenate([da, -db])
    if starts.size == 0:
        return 0.0
    order = np.argsort(starts, kind="stable")
    starts, dur = starts[order], dur[order]
    inside = starts < t
    starts, dur = starts[inside], dur[inside]
    dur = np.sign(dur) * np.minimum(np.abs(dur), t - starts)
    path = np.cumsum(dur)
    return float(field.r * np.max(np.abs(path), initial=0.0))


@dataclass
class HolderEstimate:
    slope: float
    separations: np.ndarray
    medians: np.ndarray
    flagged: bool
    reason: str = ""


def holder_diagnostic(fields, S: float | None = None, base_levels=None, max_power: int = 6,
                      min_r: int = 128) -> HolderEstimate:
    """Log-log slope of the median ``sup_s |l^a_s - l^b_s|`` against ``|a - b|``.

    Separations are dyadic, ``|a - b| = 2^j / r`` for ``j = 0..max_power``; the
    median is taken over fields and base levels.  ``base_levels`` (real levels)
    default to eight levels spread over ``(0, 1/2]``.
    """
    if isinstance(fields, LocalTimeField):
        fields = [fields]
    fields = list(fields)
    r = fields[0].r
    if any(f.r != r for f in fields):
        raise ValueError("fields must share the grid parameter")
    if r < min_r:
        raise ValueError(f"holder diagnostic needs r >= {min_r}")
    if base_levels is None:
        base_levels = [j / 16 for j in range(1, 9)]
    bases = sorted({int(round(a * r)) for a in base_levels})
    if max(f.max_level for f in fields) < 2 ** max_power:
        raise DegenerateField("too few visited levels for the requested separations")
    seps = np.array([2 ** j for j in range(max_power + 1)])
    medians = np.empty(seps.size)
    for i, m in enumerate(seps):
        vals = [sup_pair_difference(f, k, int(m), S) for f in fields for k in bases]
        medians[i] = np.median(vals)
    h = seps / r
    if np.any(medians <= 0):
        return HolderEstimate(0.0, h, medians, True, "nonpositive median difference")
    slope = float(np.polyfit(np.log(h), np.log(medians), 1)[0])
    flagged = abs(slope) < 0.05
    return HolderEstimate(slope, h, medians, flagged, "flat field" if flagged else "")


class StubField(LocalTimeField):
    """Field with prescribed totals per level (for diagnostics and tests)."""

    def __init__(self, values_by_level, r: int, horizon: float = 1.0):
        values = np.asarray(values_by_level, dtype=float)
        n = values.size
        times = np.zeros(1)
        walk = WalkPath(r, times, np.zeros(1, dtype=np.int64), horizon)
        self.walk = walk
        self.r = r
        self.horizon = horizon
        self.max_level = n - 1
        self._values = values

    def level_intervals(self, k):
        if k < 0 or k > self.max_level:
            e = np.empty(0)
            return e, e, e
        # level k accrues its whole value linearly over [0, horizon]
        return np.zeros(1), np.array([self._values[k] / self.r]), np.zeros(1)

    def at_level(self, k, s):
        s = np.asarray(s, dtype=float)
        if k < 0 or k > self.max_level:
            return np.zeros_like(s)
        return self._values[k] * np.clip(s / self.horizon, 0.0, 1.0)

    def totals(self, t=None):
        t = self.horizon if t is None else t
        return self._values * min(t / self.horizon, 1.0)


def tail_slope(sups, lambdas) -> float:
    """Slope of ``log P(sup_a l^a > lambda)`` against ``lambda^2``.

    Levels with an empty tail are left out of the fit.
    """
    sups = np.asarray(sups, dtype=float)
    lam = np.asarray(lambdas, dtype=float)
    p = np.array([(sups > x).mean() for x in lam])
    ok = p > 0
    if ok.sum() < 2:
        raise DegenerateField("fewer than two tail levels are populated")
    return float(np.polyfit(lam[ok] ** 2, np.log(p[ok]), 1)[0])
