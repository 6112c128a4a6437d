"""Counter-based splitmix64 streams.

A stream is a 64-bit key; draw ``i`` is ``mix(key + (i + 1) * GOLDEN)`` where
``mix`` is the splitmix64 finalizer::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z = z ^ (z >> 31)

All arithmetic is modulo 2**64.  Uniform doubles take the top 53 bits,
``(z >> 11) * 2**-53``.  Child streams derive their key as ``mix(key ^ mix(tag))``
with ``tag`` an integer or the UTF-8 bytes of a string read little-endian
(FNV-1a).  ``normal(n)`` draws ``2m`` uniforms (``m = ceil(n/2)``), pairs
``u1 = 1 - u[2i]``, ``u2 = u[2i+1]`` and returns the ``m`` cosine Box-Muller
terms followed by the ``m`` sine terms, truncated to ``n``.
"""

from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _tag_int(tag) -> int:
    if isinstance(tag, str):
        h = 0xCBF29CE484222325
        for b in tag.encode():
            h = ((h ^ b) * 0x100000001B3) & _MASK
        return h
    return int(tag) & _MASK


class SplitMix64:
    def __init__(self, seed: int):
        self.key = int(seed) & _MASK
        self.counter = 0

    def child(self, *tags) -> "SplitMix64":
        key = self.key
        for t in tags:
            key = mix64(key ^ mix64(_tag_int(t)))
        return SplitMix64(key)

    def u64(self, n: int) -> np.ndarray:
        i = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.key) + i * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
            z = z ^ (z >> np.uint64(31))
        return z

    def uniform(self, n: int | None = None, low: float = 0.0, high: float = 1.0):
        k = 1 if n is None else n
        u = (self.u64(k) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        out = low + (high - low) * u
        return float(out[0]) if n is None else out

    def normal(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1, u2 = 1.0 - u[0::2], u[1::2]  # u1 in (0, 1]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n]

    def integer(self, low: int, high: int) -> int:
        """Uniform integer in ``[low, high)``."""
        return low + min(int(self.uniform() * (high - low)), high - low - 1)

    def sign(self) -> float:
        return 1.0 if self.uniform() < 0.5 else -1.0

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        p = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integer(0, i + 1)
            p[i], p[j] = p[j], p[i]
        return p
