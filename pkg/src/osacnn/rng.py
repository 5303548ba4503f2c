"""Seeded SplitMix64 generator.

SplitMix64 is counter based: draw ``i`` is ``mix(seed + (i + 1) * GAMMA)``
modulo 2**64, so batches of draws vectorize in numpy and the sequence is
reproducible from the algorithm alone in any language.

Derived conversions:

* ``uniform``: top 53 bits of a draw times 2**-53, in [0, 1).
* ``integers(n)``: ``floor(uniform * n)``.
* ``normal``: Box-Muller on consecutive uniform pairs (cosine branch only).
* ``spawn(key)``: child seeded with ``mix(seed ^ fnv1a64(key))``.
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import TypeVar

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

T = TypeVar("T")


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


class SplitMix64:
    """Deterministic 64-bit generator; every random choice in the package goes through one."""

    def __init__(self, seed: int) -> None:
        self.seed = int(seed) & _MASK
        self.counter = 0

    def spawn(self, key: str | int) -> SplitMix64:
        """Independent child stream; does not advance the parent."""
        return SplitMix64(mix64(self.seed ^ fnv1a64(str(key))))

    def next_u64(self) -> int:
        self.counter += 1
        return mix64(self.seed + self.counter * GAMMA)

    def u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            states = np.uint64(self.seed) + idx * np.uint64(GAMMA)
            return _mix64_array(states)

    def random(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, size: int | tuple[int, ...], low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (low + (high - low) * u).reshape(shape)

    def normal(self, size: int | tuple[int, ...]) -> np.ndarray:
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        u = self.uniform(2 * n).reshape(n, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        return (radius * np.cos(2.0 * np.pi * u[:, 1])).reshape(shape)

    def integer(self, n: int) -> int:
        if n < 1:
            raise ValueError("n must be positive")
        return int(self.random() * n)

    def integers(self, n: int, size: int) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be positive")
        return np.floor(self.uniform(size) * n).astype(np.int64)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates, swapping position i with a draw from [0, i]."""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integer(i + 1)
            order[i], order[j] = order[j], order[i]
        return order

    def sample(self, items: Sequence[T], k: int) -> list[T]:
        """k items uniformly without replacement, in draw order."""
        if not 0 <= k <= len(items):
            raise ValueError(f"cannot sample {k} of {len(items)} items")
        return [items[i] for i in self.permutation(len(items))[:k]]
