"""Genealogical embedding of multi-indices into the half-line.

``gamma(u) = sum_j u_j exp(-t_j)``.  Single evaluations use ``math.fsum`` so the
value is the correctly rounded sum regardless of slot order; the bulk path
(:func:`node_gammas`) accumulates along root paths and agrees to a few ulps.
"""

from __future__ import annotations

import math

import numpy as np

from .bbm import BbmRealization, path_sum
from .gw_tree import GwTree, MultiIndex, ancestor_label, node_label


def gamma(u: MultiIndex, tree: GwTree) -> float:
    times = tree.branching_times
    # descending slot time, i.e. ascending weight
    terms = [v * math.exp(-times[j - 1]) for j, v in reversed(u.entries)]
    return math.fsum(terms)


def node_gammas(tree: GwTree) -> np.ndarray:
    """Embedding value of every node's label (the label it carries while alive)."""
    cached = getattr(tree, "_node_gammas", None)
    if cached is not None:
        return cached
    inc = np.zeros(tree.n_nodes)
    nonroot = tree.parent >= 0
    inc[nonroot] = tree.child_index[nonroot] * np.exp(-tree.death[tree.parent[nonroot]])
    out = path_sum(tree, inc)
    tree._node_gammas = out
    return out


def leaf_gammas(tree: GwTree, r: float | None = None) -> np.ndarray:
    """``gamma(x_k(r))`` for every leaf ``k`` (``r`` defaults to the horizon)."""
    g = node_gammas(tree)
    if r is None or r >= tree.horizon:
        return g[tree.leaves]
    return g[tree.ancestors_at(tree.leaves, r)]


def _tree(obj) -> GwTree:
    return obj.tree if isinstance(obj, BbmRealization) else obj


def gamma_leaf(realization, k: int, r: float) -> float:
    """``gamma(u^k(t)(r))`` for leaf ``k`` (0-based)."""
    tree = _tree(realization)
    if not 0 <= k < tree.n_leaves:
        raise IndexError(f"leaf index {k} outside [0, {tree.n_leaves})")
    if not 0 <= r <= tree.horizon:
        raise ValueError(f"time {r} outside [0, {tree.horizon}]")
    u = node_label(tree, int(tree.leaves[k]))
    return gamma(ancestor_label(u, r, tree), tree)


def gamma_displacement(realization, k: int, r: float, t: float | None = None) -> float:
    tree = _tree(realization)
    t = tree.horizon if t is None else t
    if not r <= t <= tree.horizon:
        raise ValueError("need r <= t <= horizon")
    return abs(gamma_leaf(tree, k, t) - gamma_leaf(tree, k, r))


def leaf_displacements(tree: GwTree, r: float) -> np.ndarray:
    """``|gamma(x_k(t)) - gamma(x_k(r))|`` for all leaves at once."""
    return np.abs(leaf_gammas(tree) - leaf_gammas(tree, r))


def tail_bound(tree: GwTree, r: float) -> float:
    """``sum_{t_j > r} (l_max - 1) exp(-t_j)``; bounds every leaf's displacement after ``r``."""
    times = tree.branching_times
    lmax = tree.law.max_offspring
    return math.fsum((lmax - 1) * math.exp(-x) for x in times[times > r])
