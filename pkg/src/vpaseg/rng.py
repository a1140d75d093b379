"""Portable 64-bit random streams.

Scalar parameters are drawn from xoshiro256** seeded through splitmix64 so a
seed produces the same sequence everywhere. Bulk per-voxel fields are filled
from a numpy PCG64 bit stream whose seed is itself drawn from the scalar
stream; only the raw 64-bit words are used, so the result does not depend on
numpy's distribution code.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
_INV_2_53 = 1.0 / (1 << 53)


def splitmix64(x: int) -> int:
    """One splitmix64 output for input state ``x`` (state advanced first)."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def derive_seed(master_seed: int, index: int) -> int:
    """Per-sample seed: splitmix64(master XOR index)."""
    return splitmix64((master_seed ^ index) & MASK64)


class Rng:
    """xoshiro256** generator."""

    def __init__(self, seed: int = 0, state: tuple[int, int, int, int] | None = None):
        if state is not None:
            self.s = [v & MASK64 for v in state]
        else:
            x = seed & MASK64
            s = []
            for _ in range(4):
                s.append(splitmix64(x))
                x = (x + 0x9E3779B97F4A7C15) & MASK64
            self.s = s
        if not any(self.s):
            raise ValueError("xoshiro256** state must not be all zero")

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def coin(self, p: float = 0.5) -> bool:
        return self.random() < p

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return min(int(self.random() * n), n - 1)

    def signed(self, low: float, high: float) -> float:
        """Magnitude from U(low, high) with an independent random sign."""
        mag = self.uniform(low, high)
        return -mag if self.coin() else mag

    def unit_vector(self) -> tuple[float, float, float]:
        z = self.uniform(-1.0, 1.0)
        phi = self.uniform(0.0, 2.0 * math.pi)
        r = math.sqrt(max(0.0, 1.0 - z * z))
        v = (r * math.cos(phi), r * math.sin(phi), z)
        n = math.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2)
        return (v[0] / n, v[1] / n, v[2] / n)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n)."""
        p = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integer(i + 1)
            p[i], p[j] = p[j], p[i]
        return p

    def uniform_field(self, shape, low: float, high: float) -> np.ndarray:
        """Float64 array of U(low, high) values, one fresh 64-bit word per element."""
        bulk = np.random.PCG64(self.next_u64())
        count = int(np.prod(shape))
        words = bulk.random_raw(count).astype(np.uint64)
        u = (words >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return (low + (high - low) * u).reshape(shape)
