"""Seeded random numbers from the SplitMix64 generator.

SplitMix64 (Steele, Lea and Flood, 2014) is a counter-based generator: the
k-th output (k = 1, 2, ...) is ``mix(seed + k * GAMMA)`` with 64-bit
wrap-around, so a block of draws is computed without a sequential loop and
the stream is identical on every platform. See docs/formats.md.
"""
from __future__ import annotations

import numpy as np

from .digest import fnv1a64

GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def mix64(z: int) -> int:
    """Scalar SplitMix64 finalizer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream with a few numpy-shaped helpers.

    ``derive(label)`` returns an independent stream keyed on the original
    seed and the label, regardless of how many draws were already taken.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self._state = self.seed

    def derive(self, *labels) -> "Rng":
        key = "/".join(str(x) for x in labels).encode()
        return Rng(mix64(self.seed ^ fnv1a64(key)))

    def next_u64(self, n: int) -> np.ndarray:
        n = int(n)
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self._state) + k * np.uint64(GAMMA)
        self._state = (self._state + n * GAMMA) & _MASK
        return _mix64_array(z)

    def random(self, size) -> np.ndarray:
        """Uniform float64 in [0, 1) from the top 53 bits of each draw."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return u.reshape(shape)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return low + (high - low) * self.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.next_u64(n), kind="stable").astype(np.int64)
