"""Time-changed walks ``s -> B(F^{-1}(s))`` and their structural diagnostics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .measures import AtomicMeasure
from .pcaf import AdditiveFunctional, Exhausted, build_pcaf, inverse
from .walk import WalkPath, local_time_field, sample_walk


@dataclass(frozen=True)
class CadlagPath:
    """Right-continuous step path: ``values[i]`` on ``[times[i], times[i+1])``.

    The last value holds up to ``horizon``.
    """

    times: np.ndarray
    values: np.ndarray
    horizon: float

    def __post_init__(self):
        if self.times.size != self.values.size or self.times.size == 0:
            raise ValueError("times and values must be nonempty and of equal length")
        if self.times[0] != 0.0:
            raise ValueError("paths start at time 0")

    def __call__(self, s):
        idx = np.searchsorted(self.times, s, side="right") - 1
        return self.values[idx]

    def compressed(self) -> "CadlagPath":
        """Drop breakpoints where the value does not change."""
        keep = np.concatenate([[True], self.values[1:] != self.values[:-1]])
        return CadlagPath(self.times[keep], self.values[keep], self.horizon)

    def dwell_times(self) -> np.ndarray:
        return np.diff(np.append(self.times, self.horizon))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("s,value\n")
            for a, b in zip(self.times, self.values):
                fh.write(f"{a:.17g},{b:.17g}\n")


def constant_path(value: float, horizon: float) -> CadlagPath:
    return CadlagPath(np.zeros(1), np.array([float(value)]), float(horizon))


def time_changed_path(walk: WalkPath, F: AdditiveFunctional, s_grid=None) -> CadlagPath:
    """``B(F^{-1}(s))`` for the walk ``B``.

    Without ``s_grid`` the exact path on ``[0, F(S))`` is returned: holding
    intervals on which ``F`` is flat are skipped, and every other interval
    contributes its level for a stretch of process time equal to its increment
    of ``F``.  With ``s_grid`` the path is sampled at those times.
    """
    if F.walk is not None and F.walk is not walk and F.walk.times.size != walk.times.size:
        raise ValueError("functional was built over a different walk")
    if s_grid is None:
        inc = np.diff(F.values)
        charged = inc > 0
        if not charged.any():
            raise Exhausted("functional never increases on this walk")
        times = F.values[:-1][charged]
        values = walk.sites[charged] / walk.r
        return CadlagPath(times, values, F.final_value).compressed()
    s = np.asarray(s_grid, dtype=float)
    if s.size == 0 or s[0] != 0.0:
        raise ValueError("sampling grid must start at 0")
    u = inverse(F, s)
    return CadlagPath(s, walk.level_at(u), float(s[-1]))


@dataclass
class TimeChangeRun:
    walk: WalkPath
    F: AdditiveFunctional
    path: CadlagPath


def run_time_change(measure: AtomicMeasure, r: int, s_horizon: float, rng, x0: float = 0.0,
                    S0: float = 1.0, max_S: float = 2.0 ** 16) -> TimeChangeRun:
    """Drive the time change up to process time ``s_horizon``.

    The walk horizon doubles until ``F(S)`` exceeds ``s_horizon``; walks are
    prefix-consistent so the extension does not resample the past.
    """
    S = float(S0)
    while True:
        walk = sample_walk(r, S, x0, rng)
        F = build_pcaf(measure, local_time_field(walk))
        if F.final_value > s_horizon:
            break
        if S >= max_S:
            raise Exhausted(f"F(S) = {F.final_value} <= {s_horizon} at walk horizon {S}")
        S *= 2.0
    path = time_changed_path(walk, F)
    path = truncate_path(path, s_horizon)
    return TimeChangeRun(walk, F, path)


def truncate_path(path: CadlagPath, horizon: float) -> CadlagPath:
    if horizon > path.horizon:
        raise Exhausted(f"path only reaches {path.horizon}")
    m = int(np.searchsorted(path.times, horizon, side="left"))
    m = max(m, 1)
    return CadlagPath(path.times[:m], path.values[:m], float(horizon))


@dataclass
class JumpStats:
    count: int
    sizes: np.ndarray
    histogram: tuple[np.ndarray, np.ndarray]
    max_dwell: float

    def unit_step_fraction(self, step: float) -> float:
        """Fraction of jumps of exactly one grid step (nan if no jumps)."""
        if self.count == 0:
            return float("nan")
        return float(np.mean(np.isclose(self.sizes, step, rtol=0, atol=1e-9 * step)))

    def to_json(self) -> str:
        return json.dumps({"count": self.count, "max_dwell": self.max_dwell,
                           "hist_counts": self.histogram[0].tolist(),
                           "hist_edges": self.histogram[1].tolist()})


def jump_stats(path: CadlagPath, bins: int = 20) -> JumpStats:
    if path.values.size == 0:
        raise ValueError("empty path")
    sizes = np.abs(np.diff(path.values))
    sizes = sizes[sizes > 0]
    hist = np.histogram(sizes, bins=bins) if sizes.size else (np.zeros(0, int), np.zeros(0))
    dwell = np.diff(np.append(path.compressed().times, path.horizon))
    return JumpStats(int(sizes.size), sizes, hist, float(dwell.max()))


@dataclass
class SupportReport:
    ok: bool
    offending_index: int | None
    atoms: np.ndarray
    occupation_fraction: np.ndarray
    weight_fraction: np.ndarray

    def to_json(self) -> str:
        d = asdict(self)
        for k in ("atoms", "occupation_fraction", "weight_fraction"):
            d[k] = np.asarray(d[k]).tolist()
        return json.dumps(d)


def support_check(path: CadlagPath, measure: AtomicMeasure) -> SupportReport:
    """Exact membership of every path value in the measure's atom set.

    Occupation fractions are the share of process time spent at each atom.
    """
    if measure.grid_spacing is None:
        raise ValueError("support check needs a lattice measure")
    h = measure.grid_spacing
    atom_idx = measure.lattice_indices()
    vals_idx = np.rint(path.values / h).astype(np.int64)
    on_grid = np.isclose(vals_idx * h, path.values, rtol=0, atol=1e-12)
    member = np.isin(vals_idx, atom_idx) & on_grid
    bad = np.flatnonzero(~member)
    dwell = path.dwell_times()
    pos = np.searchsorted(atom_idx, vals_idx)
    pos = np.clip(pos, 0, atom_idx.size - 1)
    occ = np.zeros(atom_idx.size)
    np.add.at(occ, pos[member], dwell[member])
    total = dwell.sum()
    wsum = measure.weights.sum()
    return SupportReport(bad.size == 0, int(bad[0]) if bad.size else None, measure.locations,
                         occ / total if total > 0 else occ, measure.weights / wsum)
