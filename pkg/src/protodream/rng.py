"""Seeded random streams.

Every source of randomness in a run is a named child of one root seed, so a
run is a pure function of (config, seed). Children are derived through
SeedSequence spawn keys, which keeps streams independent and reproducible
across platforms.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(tag) -> int:
    if isinstance(tag, int):
        return tag & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode())


class Rng:
    def __init__(self, seed: int, _key: tuple = ()):
        self.seed = int(seed)
        self._key = tuple(_key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=self.seed, spawn_key=self._key))
        )

    def child(self, tag) -> "Rng":
        """Derive an independent stream; same (seed, tag path) -> same stream."""
        return Rng(self.seed, self._key + (_key_part(tag),))

    def normal(self, shape=(), dtype=np.float32) -> np.ndarray:
        return self._gen.standard_normal(size=shape, dtype=np.float64).astype(dtype)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=(), dtype=np.float32) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(dtype)

    def integers(self, low: int, high: int | None = None, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, key={self._key})"
