"""Distances between step paths and additive functionals.

Both metrics are computed exactly on the merged breakpoint partition.  The sup
distance dominates the Skorokhod J1 and M1 distances, so it is a conservative
gauge; the L1 distance on ``[0, S]`` is the convergence topology itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import kendalltau

from .pcaf import AdditiveFunctional, l1_distance_functionals, sup_distance_functionals
from .time_change import CadlagPath


class CouplingMismatch(ValueError):
    pass


def _merged(p1: CadlagPath, p2: CadlagPath, S: float):
    for p in (p1, p2):
        if S > p.horizon + 1e-12:
            raise ValueError(f"path horizon {p.horizon} falls short of S={S}")
    pts = np.union1d(p1.times, p2.times)
    pts = pts[pts < S]
    widths = np.diff(np.append(pts, S))
    return pts, widths


def l1_distance(p1: CadlagPath, p2: CadlagPath, S: float) -> float:
    pts, widths = _merged(p1, p2, S)
    return float(np.sum(np.abs(p1(pts) - p2(pts)) * widths))


def sup_distance_paths(p1: CadlagPath, p2: CadlagPath, S: float) -> float:
    pts, widths = _merged(p1, p2, S)
    diff = np.abs(p1(pts) - p2(pts))[widths > 0]
    return float(diff.max(initial=0.0))


def _pair(a, b, S):
    if isinstance(a, AdditiveFunctional):
        return l1_distance_functionals(a, b, S), sup_distance_functionals(a, b, S)
    return l1_distance(a, b, S), sup_distance_paths(a, b, S)


@dataclass
class ConvergenceTable:
    labels: list
    l1: np.ndarray
    sup: np.ndarray
    tau_l1: float = float("nan")
    tau_sup: float = float("nan")
    extra: dict = field(default_factory=dict)

    def consecutive(self, metric: str = "l1") -> np.ndarray:
        m = self.l1 if metric == "l1" else self.sup
        return np.array([m[i, i + 1] for i in range(len(self.labels) - 1)])

    def rows(self):
        """``(label_i, label_j, metric, value)`` for ``i < j``."""
        n = len(self.labels)
        for i in range(n):
            for j in range(i + 1, n):
                yield self.labels[i], self.labels[j], "l1", float(self.l1[i, j])
                yield self.labels[i], self.labels[j], "sup", float(self.sup[i, j])

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("a,b,metric,value\n")
            for a, b, m, v in self.rows():
                fh.write(f"{a},{b},{m},{v:.17g}\n")


def convergence_table(family, S: float, labels=None, coupling=None) -> ConvergenceTable:
    """Pairwise distances within a coupled family of paths or functionals.

    ``coupling`` is a per-member identifier of the driving randomness (e.g. the
    walk key); mixed identifiers are rejected because uncoupled distances say
    nothing about convergence.  Kendall's tau is computed for consecutive
    distances against their position in the family.
    """
    family = list(family)
    n = len(family)
    labels = list(range(n)) if labels is None else list(labels)
    if coupling is not None and len(set(coupling)) > 1:
        raise CouplingMismatch(f"family members are driven by different randomness: {set(coupling)}")
    l1 = np.zeros((n, n))
    sup = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            l1[i, j], sup[i, j] = _pair(family[i], family[j], S)
            l1[j, i], sup[j, i] = l1[i, j], sup[i, j]
    table = ConvergenceTable(labels, l1, sup)
    if n >= 3:
        idx = np.arange(n - 1)
        table.tau_l1 = float(kendalltau(idx, table.consecutive("l1"))[0])
        table.tau_sup = float(kendalltau(idx, table.consecutive("sup"))[0])
    return table


@dataclass
class TrendResult:
    tau: float
    p_value: float
    medians: np.ndarray

    @property
    def decreasing(self) -> bool:
        return self.tau < 0


def trend_test(distances) -> TrendResult:
    """Kendall tau of pooled ``(step index, distance)`` pairs over many couplings.

    ``distances`` has shape ``(n_couplings, n_steps)``; the p-value is the
    one-sided probability of a tau this negative under no trend.
    """
    d = np.asarray(distances, dtype=float)
    idx = np.broadcast_to(np.arange(d.shape[1]), d.shape)
    res = kendalltau(idx.ravel(), d.ravel(), alternative="less")
    return TrendResult(float(res.statistic), float(res.pvalue), np.median(d, axis=0))
