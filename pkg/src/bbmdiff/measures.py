"""Martingale functionals of BBM and the atomic measures they induce.

All measures here are finite atomic measures on the half-line: the
derivative-martingale measures ``M_{r,t}``, their lattice versions, and the
McKean measures ``M^sigma_{r,t}``.  Weights of derivative-martingale measures
can be negative at small ``t``; such measures carry ``positivity_flag=False``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .bbm import BbmRealization
from .embedding import leaf_displacements, leaf_gammas

SQRT2 = math.sqrt(2.0)
MERGE_TOL = 1e-14


class EmptyMeasure(ValueError):
    pass


@dataclass(frozen=True)
class AtomicMeasure:
    """Sorted atoms ``(location, weight)``; build with :meth:`from_atoms`."""

    locations: np.ndarray
    weights: np.ndarray
    grid_spacing: float | None = None
    kind: str = "derivative"
    meta: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_atoms(cls, locations, weights, grid_spacing=None, kind="derivative", meta=None):
        loc = np.asarray(locations, dtype=float).ravel()
        w = np.asarray(weights, dtype=float).ravel()
        if loc.shape != w.shape:
            raise ValueError("locations and weights differ in length")
        if np.any(loc < 0):
            raise ValueError("atoms must lie in [0, inf)")
        order = np.argsort(loc, kind="stable")
        loc, w = loc[order], w[order]
        if loc.size:
            new_group = np.empty(loc.size, dtype=bool)
            new_group[0] = True
            new_group[1:] = np.diff(loc) > MERGE_TOL
            starts = np.flatnonzero(new_group)
            w = np.add.reduceat(w, starts)
            loc = loc[starts]
        return cls(loc, w, grid_spacing, kind, dict(meta or {}))

    def __len__(self) -> int:
        return self.locations.size

    @property
    def positivity_flag(self) -> bool:
        return bool(self.weights.size) and bool(np.all(self.weights > 0))

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)

    def cdf(self, v):
        """Right-continuous distribution function ``M([0, v])``."""
        csum = np.concatenate([[0.0], np.cumsum(self.weights)])
        idx = np.searchsorted(self.locations, v, side="right")
        return csum[idx]

    def mass(self, lo: float, hi: float) -> float:
        """Mass of ``(lo, hi]``."""
        return float(self.cdf(hi) - self.cdf(lo))

    def scaled(self, c: float) -> "AtomicMeasure":
        return AtomicMeasure(self.locations, self.weights * c, self.grid_spacing, self.kind, self.meta)

    def lattice_indices(self) -> np.ndarray:
        if self.grid_spacing is None:
            raise ValueError("measure is not lattice-binned")
        return np.rint(self.locations / self.grid_spacing).astype(np.int64)

    def to_csv(self, path, **header) -> None:
        with open(path, "w", newline="") as fh:
            meta = {**self.meta, "kind": self.kind, **header}
            for k in sorted(meta):
                fh.write(f"# {k}={meta[k]}\n")
            w = csv.writer(fh)
            w.writerow(["location", "weight"])
            for a, b in zip(self.locations, self.weights):
                w.writerow([f"{a:.17g}", f"{b:.17g}"])


# -- martingale weights ------------------------------------------------------

def derivative_weights(x: np.ndarray, t: float) -> np.ndarray:
    """Summands ``(sqrt2 t - x) exp(sqrt2 (x - sqrt2 t))``."""
    x = np.asarray(x, dtype=float)
    return (SQRT2 * t - x) * np.exp(SQRT2 * (x - SQRT2 * t))


def mckean_weights(x: np.ndarray, sigma: float, t: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.exp(SQRT2 * sigma * x - (1.0 + sigma * sigma) * t)


def _check_sigma(sigma: float) -> None:
    if not 0 < sigma < 1:
        raise ValueError(f"sigma outside (0,1): {sigma}")


def _at(realization: BbmRealization, t: float | None) -> BbmRealization:
    if t is None or t == realization.horizon:
        return realization
    if not 0 < t < realization.horizon:
        raise ValueError(f"time {t} outside (0, {realization.horizon}]")
    return realization.restrict(t)


def derivative_martingale(realization: BbmRealization, t: float | None = None) -> float:
    """``Z_t``; ``t`` defaults to the horizon."""
    if t == 0:
        return 0.0
    real = _at(realization, t)
    return math.fsum(derivative_weights(real.leaf_positions, real.horizon))


def mckean_martingale(realization: BbmRealization, sigma: float, t: float | None = None) -> float:
    _check_sigma(sigma)
    if t == 0:
        return 1.0
    real = _at(realization, t)
    return math.fsum(mckean_weights(real.leaf_positions, sigma, real.horizon))


def truncated_measure(realization: BbmRealization, r: float, t: float | None = None) -> AtomicMeasure:
    """``M_{r,t}``: weight of leaf ``j`` placed at ``gamma(x_j(r))``."""
    real = _at(realization, t)
    t = real.horizon
    if not 0 <= r < t:
        raise ValueError(f"need 0 <= r < t, got r={r}, t={t}")
    w = derivative_weights(real.leaf_positions, t)
    return AtomicMeasure.from_atoms(leaf_gammas(real.tree, r), w, kind="derivative",
                                    meta={"r": r, "t": t})


def lattice_measure(realization: BbmRealization, r: float, t: float | None = None,
                    mask: np.ndarray | None = None) -> AtomicMeasure:
    """``M~_{r,t}``: weights binned by ``gamma(x_j(t))`` into cells ``[k/r, (k+1)/r)``.

    ``mask`` optionally restricts the sum to a subset of leaves (thinning).
    """
    if not r > 0:
        raise ValueError(f"lattice parameter must be positive, got {r}")
    real = _at(realization, t)
    t = real.horizon
    w = derivative_weights(real.leaf_positions, t)
    k = np.floor(leaf_gammas(real.tree) * r).astype(np.int64)
    if mask is not None:
        w, k = w[mask], k[mask]
    cells, inv = np.unique(k, return_inverse=True)
    cw = np.zeros(cells.size)
    np.add.at(cw, inv, w)
    return AtomicMeasure(cells / r, cw, 1.0 / r, "lattice", {"r": r, "t": t})


def truncated_mckean_measure(realization: BbmRealization, sigma: float, r: float,
                             t: float | None = None) -> AtomicMeasure:
    _check_sigma(sigma)
    real = _at(realization, t)
    t = real.horizon
    if not 0 <= r < t:
        raise ValueError(f"need 0 <= r < t, got r={r}, t={t}")
    w = mckean_weights(real.leaf_positions, sigma, t)
    return AtomicMeasure.from_atoms(leaf_gammas(real.tree, r), w, kind="mckean",
                                    meta={"r": r, "t": t, "sigma": sigma})


def mckean_cdf(realization: BbmRealization, sigma: float, r: float, v, t=None):
    """``Y^sigma_{r,t}(v)``."""
    return truncated_mckean_measure(realization, sigma, r, t).cdf(v)


def thinning_mask(realization: BbmRealization, r: float) -> np.ndarray:
    """Leaves whose embedding moves at most ``exp(-r/2)`` between ``r`` and the horizon."""
    return leaf_displacements(realization.tree, r) <= math.exp(-r / 2.0)


def thinned_martingale(realization: BbmRealization, r: float, t: float | None = None) -> float:
    """``Z^gamma_{r,t}``: the derivative martingale restricted to non-moving leaves."""
    real = _at(realization, t)
    if not 0 <= r < real.horizon:
        raise ValueError("need 0 <= r < t")
    w = derivative_weights(real.leaf_positions, real.horizon)
    return math.fsum(w[thinning_mask(real, r)])


def thinned_truncated_measure(realization: BbmRealization, r: float, t=None) -> AtomicMeasure:
    real = _at(realization, t)
    t = real.horizon
    m = thinning_mask(real, r)
    w = derivative_weights(real.leaf_positions, t)[m]
    return AtomicMeasure.from_atoms(leaf_gammas(real.tree, r)[m], w, kind="derivative",
                                    meta={"r": r, "t": t, "thinned": True})


@dataclass
class GapProfile:
    hull: tuple[float, float]
    gaps: list[tuple[float, float]]
    occupancy: dict[int, tuple[int, int]]

    @property
    def largest_gap(self) -> float:
        return self.gaps[0][1] - self.gaps[0][0] if self.gaps else 0.0

    def occupied_fraction(self, level: int) -> float:
        occ, total = self.occupancy[level]
        return occ / total


def support_gap_profile(measure: AtomicMeasure, levels=range(1, 11), n_gaps: int = 10) -> GapProfile:
    """Largest empty intervals inside the atom hull and dyadic-cell occupancy.

    ``occupancy[m] = (occupied cells, cells meeting the hull)`` at scale ``2^-m``.
    """
    if len(measure) == 0:
        raise EmptyMeasure("empty measure")
    if not measure.positivity_flag:
        raise ValueError("gap profile needs a nonnegative measure")
    loc = measure.locations
    d = np.diff(loc)
    order = np.argsort(-d, kind="stable")[:n_gaps]
    gaps = [(float(loc[i]), float(loc[i + 1])) for i in order if d[i] > 0]
    occupancy = {}
    for m in levels:
        scale = 2.0 ** m
        cells = np.floor(loc * scale).astype(np.int64)
        total = int(cells[-1] - cells[0] + 1)
        occupancy[m] = (int(np.unique(cells).size), total)
    return GapProfile((float(loc[0]), float(loc[-1])), gaps, occupancy)
