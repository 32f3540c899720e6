"""Branching Brownian motion on a Galton-Watson tree.

Positions are stored per node at the start and end of its edge.  Positions
at intermediate times are produced by Brownian-bridge refinement and cached as
time slices, so repeated queries agree and every lineage remains a Brownian
path.  The two-speed model runs the same construction in the variance clock
``V(t) = int_0^t sigma^2(s) ds``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .gw_tree import GwTree
from .rng import StreamKey, as_key, derive, stream


@dataclass(frozen=True)
class SpeedProfile:
    """Piecewise variance rate: ``sigma1_sq`` on ``[0, b u)``, ``sigma2_sq`` on ``[b u, u]``."""

    sigma1_sq: float
    sigma2_sq: float
    b: float
    u: float

    def __post_init__(self):
        if not (self.sigma1_sq > 0 and self.sigma2_sq > 0):
            raise ValueError("variance rates must be positive")
        if not 0 < self.b <= 1:
            raise ValueError("switch fraction b must lie in (0, 1]")
        if not self.u > 0:
            raise ValueError("terminal time u must be positive")
        total = self.b * self.sigma1_sq + (1 - self.b) * self.sigma2_sq
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"b*sigma1^2 + (1-b)*sigma2^2 = {total!r}, must equal 1")

    @classmethod
    def from_sigma1(cls, sigma1: float, b: float, u: float) -> "SpeedProfile":
        """Fix ``sigma2`` by the unit total-variance normalisation."""
        s1 = sigma1 * sigma1
        s2 = 1.0 if b == 1 else (1.0 - b * s1) / (1.0 - b)
        return cls(s1, s2, b, u)

    @property
    def switch_time(self) -> float:
        return self.b * self.u

    def clock(self, t):
        t = np.asarray(t, dtype=float)
        bu = self.switch_time
        return self.sigma1_sq * np.minimum(t, bu) + self.sigma2_sq * np.maximum(t - bu, 0.0)


def _variance_clock(speed):
    if speed is None:
        return lambda t: np.asarray(t, dtype=float)
    return speed.clock


def path_sum(tree: GwTree, values: np.ndarray) -> np.ndarray:
    """``out[i] = sum of values over the root path of i`` (pointer jumping)."""
    acc = np.array(values, dtype=float, copy=True)
    anc = tree.parent.copy()
    while True:
        live = anc >= 0
        if not live.any():
            return acc
        idx = np.flatnonzero(live)
        acc[idx] += acc[anc[idx]]
        anc[idx] = anc[anc[idx]]


class BbmRealization:
    def __init__(self, tree: GwTree, start_pos, end_pos, speed=None, key=None, slices=None):
        self.tree = tree
        self.speed = speed
        self.start_pos = np.asarray(start_pos, dtype=float)
        self.end_pos = np.asarray(end_pos, dtype=float)
        self.key = key
        self._clock = _variance_clock(speed)
        # time -> array over nodes (nan where the node is not alive)
        self._slices: dict[float, np.ndarray] = dict(slices or {})

    @property
    def horizon(self) -> float:
        return self.tree.horizon

    @property
    def n_leaves(self) -> int:
        return self.tree.n_leaves

    @property
    def leaf_positions(self) -> np.ndarray:
        """``x_k(t)`` at the horizon, in leaf order."""
        return self.end_pos[self.tree.leaves]

    def _slice(self, s: float) -> np.ndarray:
        if s in self._slices:
            return self._slices[s]
        tree = self.tree
        alive = np.flatnonzero((tree.birth < s) & (tree.end > s))
        cached = sorted(self._slices)
        lo_c = max((c for c in cached if c < s), default=-np.inf)
        hi_c = min((c for c in cached if c > s), default=np.inf)
        b = tree.birth[alive]
        e = tree.end[alive]
        left_t = np.where(lo_c > b, lo_c, b)
        right_t = np.where(hi_c < e, hi_c, e)
        left_x = self.start_pos[alive].copy()
        right_x = self.end_pos[alive].copy()
        if lo_c > -np.inf:
            m = lo_c > b
            left_x[m] = self._slices[lo_c][alive[m]]
        if hi_c < np.inf:
            m = hi_c < e
            right_x[m] = self._slices[hi_c][alive[m]]
        vl, vs, vr = self._clock(left_t), self._clock(s), self._clock(right_t)
        span = vr - vl
        frac = np.where(span > 0, (vs - vl) / np.where(span > 0, span, 1.0), 0.0)
        mean = left_x + frac * (right_x - left_x)
        var = np.where(span > 0, (vs - vl) * (vr - vs) / np.where(span > 0, span, 1.0), 0.0)
        bits = struct.unpack("<q", struct.pack("<d", float(s)))[0]
        key = derive(self.key if self.key is not None else StreamKey(0), "bridge", bits)
        z = stream(key).standard_normal(alive.size)
        out = np.full(tree.n_nodes, np.nan)
        out[alive] = mean + np.sqrt(np.maximum(var, 0.0)) * z
        self._slices[s] = out
        return out

    def node_position(self, node: int, s: float) -> float:
        tree = self.tree
        if s == tree.birth[node]:
            return float(self.start_pos[node])
        if s == tree.end[node]:
            return float(self.end_pos[node])
        if not tree.birth[node] < s < tree.end[node]:
            raise ValueError(f"node {node} is not alive at time {s}")
        return float(self._slice(float(s))[node])

    def position(self, k: int, s: float) -> float:
        """Position at time ``s`` of the ancestor of leaf ``k`` (0-based leaf index)."""
        if not 0 <= k < self.n_leaves:
            raise IndexError(f"leaf index {k} outside [0, {self.n_leaves})")
        if not 0 <= s <= self.horizon:
            raise ValueError(f"time {s} outside [0, {self.horizon}]")
        leaf = self.tree.leaves[k]
        node = int(self.tree.ancestors_at([leaf], s)[0])
        return self.node_position(node, s)

    def positions_at(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        """``(nodes, positions)`` for every lineage alive at time ``s``."""
        if not 0 <= s <= self.horizon:
            raise ValueError(f"time {s} outside [0, {self.horizon}]")
        tree = self.tree
        nodes = tree.alive_at(s)
        pos = np.empty(nodes.size)
        at_birth = tree.birth[nodes] == s
        at_end = tree.end[nodes] == s
        inner = ~(at_birth | at_end)
        pos[at_birth] = self.start_pos[nodes[at_birth]]
        pos[at_end & ~at_birth] = self.end_pos[nodes[at_end & ~at_birth]]
        if inner.any():
            pos[inner] = self._slice(float(s))[nodes[inner]]
        return nodes, pos

    def max_position(self, s: float | None = None) -> float:
        s = self.horizon if s is None else s
        return float(self.positions_at(s)[1].max())

    def restrict(self, t: float) -> "BbmRealization":
        """The realization seen at the earlier horizon ``t`` (same paths)."""
        if t == self.horizon:
            return self
        tree = self.tree
        nodes, pos = self.positions_at(t)
        end_pos = self.end_pos.copy()
        end_pos[nodes] = pos
        keep = np.flatnonzero(tree.birth <= t)
        sub = tree.restrict(t)
        slices = {c: v[keep] for c, v in self._slices.items() if c < t}
        return BbmRealization(sub, self.start_pos[keep], end_pos[keep], self.speed, self.key, slices)

    def export_csv(self, path, grid) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["leaf", "time", "position"])
            for s in grid:
                leaves = self.tree.ancestors_at(self.tree.leaves, s)
                vals = {}
                for k, a in enumerate(leaves):
                    a = int(a)
                    if a not in vals:
                        vals[a] = self.node_position(a, float(s))
                    w.writerow([k, f"{float(s):.17g}", f"{vals[a]:.17g}"])


def attach_positions(tree: GwTree, speed: SpeedProfile | None = None, rng=None) -> BbmRealization:
    """Run independent Brownian motions along the edges of ``tree``.

    ``speed=None`` is unit speed; a :class:`SpeedProfile` must have ``u`` equal
    to the tree horizon.
    """
    if speed is not None and abs(speed.u - tree.horizon) > 1e-12:
        raise ValueError(f"speed profile terminal time {speed.u} != tree horizon {tree.horizon}")
    if rng is None:
        key = derive(tree.key, "positions") if tree.key is not None else StreamKey(0, (("positions", 0),))
    elif isinstance(rng, np.random.Generator):
        key = None
    else:
        key = as_key(rng)
    gen = rng if isinstance(rng, np.random.Generator) else stream(key)
    clock = _variance_clock(speed)
    var = clock(tree.end) - clock(tree.birth)
    inc = np.sqrt(var) * gen.standard_normal(tree.n_nodes)
    end_pos = path_sum(tree, inc)
    start_pos = end_pos - inc
    if key is None:
        key = StreamKey(int(gen.integers(0, 2**63)))
    return BbmRealization(tree, start_pos, end_pos, speed, key)


def sample_bbm(law, horizon, key, speed=None) -> BbmRealization:
    """Tree and positions from one key (tree stream ``key``, positions below it)."""
    from .gw_tree import sample_tree

    key = as_key(key)
    tree = sample_tree(law, horizon, key)
    return attach_positions(tree, speed, derive(key, "positions"))
