"""Continuous-time Galton-Watson trees and their multi-index labels.

Lineages live for a unit-exponential time and are then replaced by ``k``
children with probability ``p_k``.  With mean offspring 2 this gives
``E n(t) = e^t``.  Nodes are stored in breadth-first order in flat numpy
arrays, so parents always precede children and siblings are contiguous.

Every death event with ``k >= 1`` children (including ``k = 1``, the unary
nodes) is a global branching event.  Events are ranked by time into slots
``1, 2, ..., W(t)``; a child ``c`` of a node dying at slot ``j`` inherits its
parent's label with entry ``c`` written at slot ``j``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np

from .rng import StreamKey, as_key, categorical, stream

_TOL = 1e-12


class InvalidLaw(ValueError):
    pass


@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support offspring law ``probs[k - 1] = p_k`` for ``k >= 1``."""

    probs: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise InvalidLaw("offspring law needs at least one probability")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InvalidLaw("offspring probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > _TOL:
            raise InvalidLaw(f"offspring probabilities sum to {p.sum()!r}, not 1")
        k = np.arange(1, p.size + 1)
        if abs(float(np.dot(k, p)) - 2.0) > _TOL:
            raise InvalidLaw(f"mean offspring is {float(np.dot(k, p))!r}, must be 2")
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    @classmethod
    def from_dict(cls, pk: dict) -> "OffspringLaw":
        """Build from ``{k: p_k}``."""
        kmax = max(int(k) for k in pk)
        probs = [0.0] * kmax
        for k, v in pk.items():
            if int(k) < 1:
                raise InvalidLaw("offspring counts start at 1")
            probs[int(k) - 1] = float(v)
        return cls(tuple(probs))

    @property
    def support(self) -> np.ndarray:
        return np.arange(1, len(self.probs) + 1)

    @property
    def max_offspring(self) -> int:
        nz = np.flatnonzero(np.asarray(self.probs) > 0)
        return int(nz[-1]) + 1

    @property
    def K(self) -> float:
        k = self.support
        return float(np.dot(k * (k - 1), self.probs))


BINARY = OffspringLaw((0.0, 1.0))


class GwTree:
    """A realized Galton-Watson tree up to ``horizon``.

    Arrays are indexed by node id.  ``death`` is the end of the node's
    lifetime; nodes with ``death > horizon`` are the leaves (alive at the
    horizon) and have ``offspring == 0``.
    """

    def __init__(self, law, horizon, parent, birth, death, offspring, child_index, key=None):
        self.law = law
        self.horizon = float(horizon)
        self.parent = np.asarray(parent, dtype=np.int64)
        self.birth = np.asarray(birth, dtype=float)
        self.death = np.asarray(death, dtype=float)
        self.offspring = np.asarray(offspring, dtype=np.int64)
        self.child_index = np.asarray(child_index, dtype=np.int64)
        self.key = key

    @property
    def n_nodes(self) -> int:
        return self.parent.size

    @cached_property
    def first_child(self) -> np.ndarray:
        fc = np.full(self.n_nodes, -1, dtype=np.int64)
        nonroot = np.arange(1, self.n_nodes)
        first = nonroot[self.child_index[1:] == 0]
        fc[self.parent[first]] = first
        return fc

    @cached_property
    def leaves(self) -> np.ndarray:
        """Node ids of the lineages alive at the horizon, in id order."""
        return np.flatnonzero(self.offspring == 0)

    @property
    def n_leaves(self) -> int:
        return self.leaves.size

    @cached_property
    def internal(self) -> np.ndarray:
        return np.flatnonzero(self.offspring > 0)

    @cached_property
    def _event_order(self) -> np.ndarray:
        nodes = self.internal
        # ties (floating-point collisions) are broken by node id
        return nodes[np.lexsort((nodes, self.death[nodes]))]

    @cached_property
    def branching_times(self) -> np.ndarray:
        """Global branching times ``t_1 < t_2 < ... < t_W``."""
        return self.death[self._event_order]

    @cached_property
    def slot(self) -> np.ndarray:
        """1-based slot of each node's death event (0 for leaves)."""
        s = np.zeros(self.n_nodes, dtype=np.int64)
        s[self._event_order] = np.arange(1, self._event_order.size + 1)
        return s

    @cached_property
    def end(self) -> np.ndarray:
        return np.minimum(self.death, self.horizon)

    def children(self, node: int) -> np.ndarray:
        fc = self.first_child[node]
        if fc < 0:
            return np.empty(0, dtype=np.int64)
        return np.arange(fc, fc + self.offspring[node])

    def path_to_root(self, node: int) -> list[int]:
        out = [int(node)]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out

    def ancestors_at(self, nodes, r: float) -> np.ndarray:
        """Ancestor of each node that is alive at time ``r`` (``birth <= r < death``)."""
        a = np.array(nodes, dtype=np.int64, copy=True)
        if r < 0:
            raise ValueError("r must be nonnegative")
        while True:
            late = self.birth[a] > r
            if not late.any():
                return a
            a[late] = self.parent[a[late]]

    def alive_at(self, r: float) -> np.ndarray:
        if r >= self.horizon:
            return self.leaves
        return np.flatnonzero((self.birth <= r) & (self.death > r))

    def restrict(self, t: float) -> "GwTree":
        """The same tree seen at the earlier horizon ``t``."""
        if not 0 < t <= self.horizon:
            raise ValueError(f"restriction horizon {t} outside (0, {self.horizon}]")
        keep = np.flatnonzero(self.birth <= t)
        remap = np.full(self.n_nodes, -1, dtype=np.int64)
        remap[keep] = np.arange(keep.size)
        parent = self.parent[keep]
        parent = np.where(parent >= 0, remap[np.maximum(parent, 0)], -1)
        death = self.death[keep]
        offspring = np.where(death > t, 0, self.offspring[keep])
        return GwTree(self.law, t, parent, self.birth[keep], death, offspring,
                      self.child_index[keep], key=self.key)

    # -- serialization -----------------------------------------------------

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            header = {
                "seed": None if self.key is None else self.key.seed,
                "stream_path": None if self.key is None else [list(p) for p in self.key.path],
                "law": list(self.law.probs),
                "horizon": self.horizon,
            }
            fh.write(json.dumps(header) + "\n")
            for i in range(self.n_nodes):
                fh.write(json.dumps({
                    "id": i,
                    "parent": int(self.parent[i]),
                    "birth_time": float(self.birth[i]),
                    "offspring_count": int(self.offspring[i]),
                }) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "GwTree":
        with open(path) as fh:
            header = json.loads(fh.readline())
            recs = [json.loads(line) for line in fh if line.strip()]
        n = len(recs)
        parent = np.array([r["parent"] for r in recs], dtype=np.int64)
        birth = np.array([r["birth_time"] for r in recs], dtype=float)
        offspring = np.array([r["offspring_count"] for r in recs], dtype=np.int64)
        death = np.full(n, np.inf)
        child_index = np.zeros(n, dtype=np.int64)
        for i in range(1, n):
            p = parent[i]
            death[p] = birth[i]
            child_index[i] = 0 if parent[i - 1] != p else child_index[i - 1] + 1
        key = None
        if header.get("seed") is not None:
            key = StreamKey(header["seed"], tuple((a, b) for a, b in header.get("stream_path") or ()))
        return cls(OffspringLaw(tuple(header["law"])), header["horizon"], parent, birth,
                   death, offspring, child_index, key=key)


def sample_tree(law: OffspringLaw, horizon: float, rng) -> GwTree:
    """Sample a Galton-Watson tree up to ``horizon``.

    ``rng`` is a :class:`StreamKey`, an integer seed, or a numpy Generator.
    """
    if not isinstance(law, OffspringLaw):
        raise InvalidLaw("law must be an OffspringLaw")
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    key = None
    if isinstance(rng, np.random.Generator):
        gen = rng
    else:
        key = as_key(rng)
        gen = stream(key)
    probs = np.asarray(law.probs)
    values = law.support

    parents = [np.array([-1], dtype=np.int64)]
    births = [np.zeros(1)]
    deaths = []
    offspring = []
    cindex = [np.zeros(1, dtype=np.int64)]
    next_id = 1
    gen_start = 0
    cur_birth = births[0]
    while cur_birth.size:
        d = cur_birth + gen.exponential(1.0, cur_birth.size)
        inner = d <= horizon
        k = np.zeros(cur_birth.size, dtype=np.int64)
        n_inner = int(inner.sum())
        if n_inner:
            k[inner] = categorical(gen, probs, n_inner, values=values)
        deaths.append(d)
        offspring.append(k)
        total = int(k.sum())
        if total == 0:
            break
        ids = gen_start + np.arange(cur_birth.size)
        child_parent = np.repeat(ids, k)
        child_birth = np.repeat(d, k)
        starts = np.cumsum(k) - k
        child_idx = np.arange(total) - np.repeat(starts, k)
        parents.append(child_parent)
        births.append(child_birth)
        cindex.append(child_idx)
        gen_start = next_id
        next_id += total
        cur_birth = child_birth
    return GwTree(law, horizon, np.concatenate(parents), np.concatenate(births),
                  np.concatenate(deaths), np.concatenate(offspring), np.concatenate(cindex),
                  key=key)


@dataclass(frozen=True)
class MultiIndex:
    """Sparse multi-index: sorted ``(slot, value)`` pairs with nonzero values."""

    entries: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        cleaned = tuple(sorted((int(j), int(v)) for j, v in self.entries if int(v) != 0))
        if any(j < 1 for j, _ in cleaned) or any(v < 0 for _, v in cleaned):
            raise ValueError("multi-index slots start at 1 and entries are nonnegative")
        if len({j for j, _ in cleaned}) != len(cleaned):
            raise ValueError("duplicate slot in multi-index")
        object.__setattr__(self, "entries", cleaned)

    @classmethod
    def from_dict(cls, d: dict) -> "MultiIndex":
        return cls(tuple(d.items()))

    def __getitem__(self, slot: int) -> int:
        return dict(self.entries).get(slot, 0)

    def as_dict(self) -> dict[int, int]:
        return dict(self.entries)

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        d = self.as_dict()
        for j, v in other.entries:
            d[j] = d.get(j, 0) + v
        return MultiIndex(tuple(d.items()))

    def is_zero(self) -> bool:
        return not self.entries


def node_label(tree: GwTree, node: int) -> MultiIndex:
    entries = []
    a = int(node)
    while tree.parent[a] >= 0:
        p = int(tree.parent[a])
        if tree.child_index[a]:
            entries.append((int(tree.slot[p]), int(tree.child_index[a])))
        a = p
    return MultiIndex(tuple(entries))


def label_nodes(tree: GwTree, nodes: Iterable[int] | None = None) -> dict[int, MultiIndex]:
    """Labels ``u^k(t)`` of the leaves (or of the given nodes)."""
    nodes = tree.leaves if nodes is None else nodes
    return {int(n): node_label(tree, n) for n in nodes}


def ancestor_label(u: MultiIndex, r: float, tree: GwTree) -> MultiIndex:
    """Truncation ``u(r)``: keep entries whose slot time is at most ``r``."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    times = tree.branching_times
    return MultiIndex(tuple((j, v) for j, v in u.entries if times[j - 1] <= r))
