"""Counter-based random streams.

Every stream is addressed by (seed, key tuple).  Re-creating a stream with
the same address reproduces its draws exactly, and distinct addresses give
statistically independent streams, so per-sentence / per-rollout streams are
reproducible no matter how work is batched or scheduled.
"""

from __future__ import annotations

import zlib

import numpy as np


def _as_key_part(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream key parts must be non-negative, got {part}")
        return int(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"stream key parts must be int or str, got {type(part)!r}")


class RngStream:
    """A deterministic random stream keyed by (seed, *key)."""

    __slots__ = ("seed", "key", "_gen")

    def __init__(self, seed: int, *key):
        self.seed = int(seed)
        self.key = tuple(_as_key_part(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def derive(self, *key) -> "RngStream":
        """A new independent stream whose address extends this one's key."""
        return RngStream(self.seed, *self.key, *key)

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size=None, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, std, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngStream(seed={self.seed}, key={self.key})"
