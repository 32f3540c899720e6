"""Deterministic, splittable random streams.

Every consumer (a tree, a walk, a Monte Carlo replicate) is identified by a
:class:`StreamKey`: the run seed plus a path of ``(tag, index)`` pairs.  The key
is hashed into a 128-bit Philox key, so the stream a consumer sees depends only
on its key and never on the order in which realizations are produced.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class StreamKey:
    seed: int
    path: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def child(self, tag: str, index: int = 0) -> "StreamKey":
        return derive(self, tag, index)

    def digest(self) -> bytes:
        h = hashlib.blake2b(digest_size=16, person=b"bbmdiff-stream")
        h.update(struct.pack("<Q", int(self.seed)))
        for tag, index in self.path:
            encoded = tag.encode()
            h.update(struct.pack("<I", len(encoded)))
            h.update(encoded)
            h.update(struct.pack("<q", int(index)))
        return h.digest()


def derive(key: StreamKey, tag: str, index: int = 0) -> StreamKey:
    """Return the key of the sub-stream ``(tag, index)`` below ``key``."""
    return StreamKey(key.seed, key.path + ((str(tag), int(index)),))


def stream(key: StreamKey) -> np.random.Generator:
    """Counter-based generator for ``key``; same key, same draws."""
    k0, k1 = struct.unpack("<QQ", key.digest())
    return np.random.Generator(np.random.Philox(key=np.array([k0, k1], dtype=np.uint64)))


def as_key(seed_or_key) -> StreamKey:
    if isinstance(seed_or_key, StreamKey):
        return seed_or_key
    return StreamKey(int(seed_or_key))


def gaussian(gen: np.random.Generator, size=None, scale=1.0):
    return gen.normal(0.0, scale, size)


def exponential(gen: np.random.Generator, rate: float = 1.0, size=None):
    if rate <= 0:
        raise ValueError("rate must be positive")
    return gen.exponential(1.0 / rate, size)


def categorical(gen: np.random.Generator, probs, size=None, values=None):
    """Draw from a finite distribution.

    ``values`` defaults to ``0, 1, ..., len(probs) - 1``.
    """
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("probs must be a nonnegative vector summing to 1")
    support = np.arange(p.size) if values is None else np.asarray(values)
    nonzero = np.flatnonzero(p)
    if nonzero.size == 1:
        # degenerate laws must not consume randomness differently from the rest
        out = np.full(() if size is None else size, support[nonzero[0]])
        gen.random(size)
        return out if size is not None else out.item()
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    u = gen.random(size)
    idx = np.searchsorted(cdf, u, side="right")
    return support[idx]
