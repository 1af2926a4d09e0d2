"""Deterministic random streams.

Every source of randomness in the package flows through an RngStream so a
single seed fixes an entire experiment. Streams are backed by numpy's PCG64
bit generator (a documented permuted-congruential generator with published
constants), whose output sequence is stable across platforms and numpy
versions for a fixed seed.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "pcg64"

_MASK64 = (1 << 64) - 1


class RngStream:
    """A named, reproducible random stream.

    Identical (seed, path) pairs produce identical sample sequences across
    process runs and platforms. ``child(tag)`` derives an independent
    substream, so e.g. shuffling and weight init never share state.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed) & _MASK64
        self.path = tuple(int(p) & _MASK64 for p in path)
        self.algorithm = ALGORITHM
        seq = np.random.SeedSequence([self.seed, *self.path])
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def child(self, tag: int) -> "RngStream":
        """Derive an independent substream identified by an integer tag."""
        return RngStream(self.seed, self.path + (int(tag),))

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def random(self, shape=None) -> np.ndarray:
        return self._gen.random(size=shape)

    def integers(self, low: int, high: int, shape=None):
        """Integers drawn uniformly from [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        """Sample ``size`` indices from range(n)."""
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def coin(self) -> int:
        """A fair coin flip in {0, 1}."""
        return int(self._gen.integers(0, 2))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"
