"""Portable deterministic randomness.

Every stochastic choice in the pipeline flows through splitmix64, a 64-bit
counter-based generator: the state advances by a fixed odd constant and each
output is a bijective mix of the counter.  The same seed therefore yields the
same draw sequence on every platform and under both kernel backends, which is
what makes golden files and cross-process determinism possible.

Doubles are built as ``(u64 >> 11) * 2**-53``, uniform on [0, 1).  Bounded
integers use ``u64 % n`` (modulo bias is below 2**-50 for any n this codebase
uses).
"""

from __future__ import annotations

import math

from .errors import ParameterError

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_DOUBLE_SCALE = 2.0**-53


def mix64(z: int) -> int:
    """splitmix64 finalizer: a bijective avalanche mix of a 64-bit word."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def hash_text(text: str) -> int:
    """FNV-1a 64-bit hash of UTF-8 bytes; stable stream key for string ids."""
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def derive(seed: int, *keys: int | str) -> int:
    """Fold sub-stream keys into a seed.

    Used to give each (image, epoch, teacher, ...) its own independent stream
    while keeping everything reproducible from one root seed.
    """
    s = seed & MASK64
    for k in keys:
        kv = hash_text(k) if isinstance(k, str) else (k & MASK64)
        s = mix64((s + GOLDEN_GAMMA + kv) & MASK64)
    return s


class Stream:
    """One splitmix64 draw sequence; cheap to create, safe to fork via derive()."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def next_double(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * _DOUBLE_SCALE

    def doubles(self, n: int) -> "np.ndarray":
        """``n`` uniforms in [0, 1) at once, bit-identical to ``n`` calls of
        ``next_double`` (the counter construction makes the batch trivially
        vectorizable)."""
        import numpy as np

        if n < 0:
            raise ParameterError(f"doubles needs n >= 0, got {n}")
        idx = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + idx * np.uint64(GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return (z >> np.uint64(11)).astype(np.float64) * _DOUBLE_SCALE

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_double()

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ParameterError(f"next_below needs n >= 1, got {n}")
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        idx = list(range(n))
        self.shuffle(idx)
        return idx

    def beta(self, alpha: float) -> float:
        """Symmetric Beta(alpha, alpha) draw.

        Beta(1,1) is uniform and taken directly; other shapes use Johnk's
        rejection method, adequate for the small alphas used in mixing.
        """
        if alpha <= 0.0:
            raise ParameterError(f"beta shape must be positive, got {alpha}")
        if alpha == 1.0:
            return self.next_double()
        inv = 1.0 / alpha
        while True:
            x = self.next_double() ** inv
            y = self.next_double() ** inv
            s = x + y
            if 0.0 < s <= 1.0:
                return x / s


def spawn(seed: int, *keys: int | str) -> Stream:
    """Stream seeded by derive(seed, *keys)."""
    return Stream(derive(seed, *keys))
