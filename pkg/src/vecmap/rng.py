"""Deterministic PRNG used for scene generation and parameter init.

xoshiro256** (Blackman & Vigna) seeded through splitmix64, implemented on
plain Python integers so the bit stream is identical on every platform.
Floating-point draws use only the documented conversions below; normal
deviates use Box-Muller (libm log/cos/sin, reproducible to ~1 ulp).
"""
from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


class Rng:
    """xoshiro256** stream with uniform / normal / integer helpers."""

    def __init__(self, seed: int):
        self._s = []
        state = seed & _MASK64
        for _ in range(4):
            word, state = _splitmix64(state)
            self._s.append(word)
        self._gauss_cache: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Uniform double in [0, 1): top 53 bits scaled by 2^-53."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def normal(self) -> float:
        if self._gauss_cache is not None:
            z = self._gauss_cache
            self._gauss_cache = None
            return z
        # u1 in (0, 1] so log is finite
        u1 = ((self.next_u64() >> 11) + 1) * 2.0 ** -53
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._gauss_cache = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi] inclusive."""
        span = hi - lo + 1
        return lo + int(self.uniform() * span) % span

    def uniforms(self, n: int) -> list[float]:
        return [self.uniform() for _ in range(n)]

    def normals(self, n: int) -> list[float]:
        return [self.normal() for _ in range(n)]

    def spawn(self, tag: int) -> "Rng":
        """Independent child stream; tag keeps siblings decorrelated."""
        return Rng(self.next_u64() ^ ((tag * 0x9E3779B97F4A7C15) & _MASK64))
