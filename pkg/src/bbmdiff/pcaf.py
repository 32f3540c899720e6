"""Additive functionals ``F(s) = int l^a_s M(da)`` of the reflected walk.

A functional built from an atomic measure and a walk is piecewise linear with
breakpoints at the walk's jump times: on a holding interval at level ``k`` it
grows at rate ``r * W[k]``, where ``W[k]`` is the measure's weight assigned to
grid level ``k`` (atoms between grid levels are split linearly, matching
:func:`bbmdiff.walk.evaluate_local_time`).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

from .measures import AtomicMeasure, EmptyMeasure, lattice_measure, thinned_truncated_measure, \
    thinning_mask, truncated_measure
from .rng import as_key, derive, stream
from .walk import LocalTimeField, WalkPath, interpolation_weights


class NegativeWeight(ValueError):
    """The measure has nonpositive atoms, so it is not the Revuz measure of a PCAF."""


class Exhausted(ValueError):
    """A level beyond ``F(S)`` was requested; the walk horizon must be extended."""


@dataclass(frozen=True)
class AdditiveFunctional:
    breakpoints: np.ndarray
    values: np.ndarray
    walk: WalkPath | None = None

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def final_value(self) -> float:
        return float(self.values[-1])

    def __call__(self, s):
        return np.interp(s, self.breakpoints, self.values)

    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.breakpoints)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("s,F\n")
            for a, b in zip(self.breakpoints, self.values):
                fh.write(f"{a:.17g},{b:.17g}\n")


def level_weights(measure: AtomicMeasure, r: int, n_levels: int | None = None) -> np.ndarray:
    """Weight of ``measure`` carried by each grid level ``k / r``."""
    if len(measure) == 0:
        return np.zeros(n_levels or 0)
    top = int(math.floor(measure.locations[-1] * r)) + 3
    n = top if n_levels is None else max(n_levels, top)
    W = np.zeros(n)
    for a, w in zip(measure.locations, measure.weights):
        (k0, c0), (k1, c1) = interpolation_weights(float(a), r)
        W[k0] += w * c0
        if c1:
            W[k1] += w * c1
    return W


def _check_positive(measure: AtomicMeasure) -> None:
    if len(measure) == 0:
        raise EmptyMeasure("cannot build a functional from an empty measure")
    if not measure.positivity_flag:
        raise NegativeWeight(
            f"measure has {int(np.sum(measure.weights <= 0))} nonpositive atoms "
            f"(min weight {measure.weights.min():.3g})")


def build_pcaf(measure: AtomicMeasure, field: LocalTimeField) -> AdditiveFunctional:
    _check_positive(measure)
    walk = field.walk
    W = level_weights(measure, walk.r, field.max_level + 1)
    inc = walk.r * W[walk.sites] * walk.durations
    values = np.concatenate([[0.0], np.cumsum(inc)])
    return AdditiveFunctional(np.append(walk.times, walk.horizon), values, walk)


def thinned_pcaf(realization, r: float, t: float | None, field: LocalTimeField,
                 lattice: bool = False) -> AdditiveFunctional:
    """Functional of the thinned measure (leaves whose embedding moved at most ``e^{-r/2}``)."""
    real = realization if t is None or t == realization.horizon else realization.restrict(t)
    if lattice:
        measure = lattice_measure(real, r, mask=thinning_mask(real, r))
    else:
        measure = thinned_truncated_measure(real, r)
    return build_pcaf(measure, field)


def full_pcaf(realization, r: float, t: float | None, field: LocalTimeField,
              lattice: bool = False) -> AdditiveFunctional:
    real = realization if t is None or t == realization.horizon else realization.restrict(t)
    measure = lattice_measure(real, r) if lattice else truncated_measure(real, r)
    return build_pcaf(measure, field)


def inverse(F: AdditiveFunctional, u):
    """Right-continuous inverse ``F^{-1}(u) = inf{s : F(s) > u}``."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 0):
        raise ValueError("levels must be nonnegative")
    if np.any(u_arr >= F.values[-1]):
        raise Exhausted(f"level {float(np.max(u_arr))} >= F(S) = {F.final_value}")
    i = np.searchsorted(F.values, u_arr, side="right")
    v0, v1 = F.values[i - 1], F.values[i]
    b0, b1 = F.breakpoints[i - 1], F.breakpoints[i]
    out = b0 + (u_arr - v0) / (v1 - v0) * (b1 - b0)
    return out if out.ndim else float(out)


def sup_distance_functionals(F1: AdditiveFunctional, F2: AdditiveFunctional, S: float) -> float:
    """Exact ``sup_{s <= S} |F1(s) - F2(s)|`` (the maximum sits on a breakpoint)."""
    if S > F1.horizon + 1e-12 or S > F2.horizon + 1e-12:
        raise ValueError(f"horizon mismatch: S={S}, horizons {F1.horizon}, {F2.horizon}")
    pts = np.union1d(F1.breakpoints, F2.breakpoints)
    pts = np.append(pts[pts < S], S)
    return float(np.max(np.abs(F1(pts) - F2(pts))))


def l1_distance_functionals(F1: AdditiveFunctional, F2: AdditiveFunctional, S: float) -> float:
    """Exact ``int_0^S |F1 - F2| ds`` for piecewise-linear functionals."""
    pts = np.union1d(F1.breakpoints, F2.breakpoints)
    pts = np.append(pts[pts < S], S)
    d = F1(pts) - F2(pts)
    a, b, h = d[:-1], d[1:], np.diff(pts)
    same = a * b >= 0
    out = np.where(same, 0.5 * np.abs(a + b) * h, 0.0)
    cross = ~same
    # a sign change inside the segment: two triangles
    tot = np.abs(a[cross]) + np.abs(b[cross])
    out[cross] = 0.5 * h[cross] * (a[cross] ** 2 + b[cross] ** 2) / tot
    return float(out.sum())


# -- Revuz correspondence ----------------------------------------------------

@dataclass(frozen=True)
class StepFunction:
    """``values[i]`` on ``[edges[i], edges[i+1])``, zero elsewhere."""

    edges: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.edges) != len(self.values) + 1:
            raise ValueError("need len(edges) == len(values) + 1")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError("edges must increase")

    @classmethod
    def indicator(cls, lo: float, hi: float, height: float = 1.0) -> "StepFunction":
        return cls((max(lo, 0.0), hi), (height,))

    @property
    def support_max(self) -> float:
        nz = [i for i, v in enumerate(self.values) if v != 0]
        return self.edges[nz[-1] + 1] if nz else 0.0

    @property
    def sup_norm(self) -> float:
        return max((abs(v) for v in self.values), default=0.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        i = np.searchsorted(self.edges, x, side="right") - 1
        vals = np.append(self.values, 0.0)
        inside = (i >= 0) & (i < len(self.values))
        return np.where(inside, vals[np.where(inside, i, -1)], 0.0)


@dataclass
class RevuzReport:
    lhs: float
    rhs: float
    se: float
    rel_error: float
    bias_bound: float
    n_walks: int
    n_starts: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _walk_batch_times(gen, r: int, k0: int, horizon: float, batch: int, levels: np.ndarray):
    """Time spent at each of ``levels`` by ``batch`` independent walks from ``k0``."""
    rate = float(r) * r
    expected = rate * horizon
    n = int(expected + 8.0 * math.sqrt(expected) + 32)
    out = np.zeros((batch, levels.size))
    todo = np.arange(batch)
    while todo.size:
        hold = gen.exponential(1.0 / rate, (todo.size, n))
        steps = gen.integers(0, 2, (todo.size, n), dtype=np.int8) * 2 - 1
        jumps = np.cumsum(hold, axis=1)
        short = jumps[:, -1] < horizon
        sites = np.abs(k0 + np.cumsum(steps, axis=1, dtype=np.int64))
        starts = np.concatenate([np.zeros((todo.size, 1)), jumps[:, :-1]], axis=1)
        dur = np.clip(np.minimum(jumps, horizon) - starts, 0.0, None)
        site_all = np.concatenate([np.full((todo.size, 1), k0), sites[:, :-1]], axis=1)
        for j, k in enumerate(levels):
            out[todo, j] = np.sum(dur * (site_all == k), axis=1)
        # rows that ran out of steps before the horizon are redrawn
        todo = todo[short]
    return out


def revuz_check(measure: AtomicMeasure, f: StepFunction, r: int = 64, N: int = 100_000,
                rng=0, horizon: float = 1.0, x_max: float | None = None,
                batch: int = 256) -> RevuzReport:
    """Monte Carlo check of ``int f dM = int E_x[int_0^1 f(B_s) dF_s] dx``.

    The right side integrates over start levels ``x = j/r`` in ``[0, x_max]``
    with the walk's reversible weights (``1/(2r)`` at 0, ``1/r`` elsewhere).
    The Stieltjes integral is exact: on a holding interval at level ``k`` the
    integrand is ``f(k/r)`` and ``F`` grows by ``r W[k]`` per unit time.
    """
    if len(measure) and np.any(measure.weights < 0):
        raise NegativeWeight("Revuz check needs a nonnegative measure")
    supp = f.support_max
    if x_max is None:
        x_max = supp + 4.0
    if supp > x_max:
        raise ValueError(f"f is supported up to {supp}, beyond the start-point cutoff {x_max}")
    lhs = math.fsum(float(w * f(a)) for a, w in zip(measure.locations, measure.weights))
    W = level_weights(measure, r)
    levels = np.flatnonzero(W)
    coef = r * W[levels] * f(levels / r)
    n_starts = int(math.floor(x_max * r)) + 1
    per = max(1, N // n_starts)
    key = as_key(rng)
    rhs_terms = []
    var_terms = []
    if levels.size == 0 or not np.any(coef):
        return RevuzReport(lhs, 0.0, 0.0, 0.0 if lhs == 0 else 1.0, 0.0, per * n_starts, n_starts)
    for j in range(n_starts):
        xkey = derive(key, "x", j)
        vals = []
        done = 0
        b = 0
        while done < per:
            size = min(batch, per - done)
            gen = stream(derive(xkey, "replicate-batch", b))
            times = _walk_batch_times(gen, r, j, horizon, size, levels)
            vals.append(times @ coef)
            done += size
            b += 1
        vals = np.concatenate(vals)
        weight = (0.5 if j == 0 else 1.0) / r
        rhs_terms.append(weight * vals.mean())
        var_terms.append(weight ** 2 * vals.var(ddof=1) / vals.size if vals.size > 1 else 0.0)
    rhs = math.fsum(rhs_terms) / horizon
    se = math.sqrt(math.fsum(var_terms)) / horizon
    z0 = (x_max - supp) / math.sqrt(horizon)
    # int over start distances beyond the cutoff of P(reach the support before the horizon)
    tail = 2.0 * float(norm.pdf(z0) - z0 * norm.sf(z0)) * math.sqrt(horizon)
    bias = f.sup_norm * float(np.abs(measure.weights).sum()) * 2.0 * math.sqrt(2 * horizon / math.pi) * tail
    rel = abs(rhs - lhs) / abs(lhs) if lhs else abs(rhs)
    return RevuzReport(lhs, rhs, se, rel, bias, per * n_starts, n_starts)
