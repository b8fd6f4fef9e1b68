"""Deterministic, platform-independent random numbers.

The generator is xoshiro256** with its 256-bit state filled from a
splitmix64 sequence started at the user seed. Everything is plain integer
arithmetic modulo 2**64, so a given seed produces the same stream on every
platform and in every language that implements the same two algorithms.

Doubles are built from the top 53 bits of each output. Normal deviates use
the Box-Muller transform, consuming two uniforms per pair of deviates.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; return ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, *path: int) -> int:
    """Hash a seed together with integer labels into an independent seed."""
    s = seed & MASK64
    for p in path:
        s, out = splitmix64(s ^ (p & MASK64))
        s = out
    return s


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Rng:
    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be a non-negative 64-bit integer")
        self.seed = seed & MASK64
        sm = self.seed
        state = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            state.append(out)
        self._s = state
        self._spare = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float, size=None):
        if size is None:
            return low + (high - low) * self.random()
        n = int(np.prod(size))
        out = np.fromiter((self.random() for _ in range(n)), dtype=np.float64, count=n)
        return (low + (high - low) * out).reshape(size)

    def integers(self, low: int, high: int) -> int:
        """Integer in [low, high). Modulo bias is below 2**-40 for small ranges."""
        return low + self.next_u64() % (high - low)

    def normal(self, sigma: float = 1.0, size=None):
        if size is None:
            return sigma * self._gauss()
        n = int(np.prod(size))
        out = np.fromiter((self._gauss() for _ in range(n)), dtype=np.float64, count=n)
        return (sigma * out).reshape(size)

    def _gauss(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.random()  # (0, 1], keeps log finite
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)
