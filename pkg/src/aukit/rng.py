"""Deterministic pseudo-random numbers: splitmix64-seeded xoshiro256++.

Every random decision in the toolkit (parameter init, shuffling, data
augmentation, synthetic data) flows through this generator so that a fixed
seed reproduces identical bit streams on every platform.  The algorithms are
the public-domain ones by Blackman and Vigna; integer arithmetic is done
modulo 2**64.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64_step(x: int) -> tuple[int, int]:
    """Advance a splitmix64 state, returning (new_state, output)."""
    x = (x + _GOLDEN) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


def derive_seed(seed: int, *tags: int) -> int:
    """Mix a base seed with integer tags into a fresh 64-bit seed.

    Used to give independent, reproducible streams to sub-tasks (per-epoch
    shuffles, per-video generation, parameter init) without sharing state.
    """
    x = seed & _MASK
    for tag in tags:
        x, out = _splitmix64_step(x ^ ((tag * _GOLDEN) & _MASK))
        x = out
    x, out = _splitmix64_step(x)
    return out


class Xoshiro256pp:
    """xoshiro256++ generator with a splitmix64-filled state."""

    def __init__(self, seed: int):
        state = []
        x = seed & _MASK
        for _ in range(4):
            x, out = _splitmix64_step(x)
            state.append(out)
        self._s = state
        self._gauss_spare: float | None = None

    def next_u64(self) -> int:
        s = self._s
        result = ((self._rotl(s[0] + s[3], 23) + s[0])) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = self._rotl(s[3], 45)
        return result

    @staticmethod
    def _rotl(x: int, k: int) -> int:
        x &= _MASK
        return ((x << k) | (x >> (64 - k))) & _MASK

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling (unbiased)."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        threshold = (2 ** 64 // n) * n
        while True:
            draw = self.next_u64()
            if draw < threshold:
                return draw % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def normal(self) -> float:
        """Standard normal via Box-Muller (pairs cached)."""
        if self._gauss_spare is not None:
            z = self._gauss_spare
            self._gauss_spare = None
            return z
        u1 = 1.0 - self.random()  # (0, 1], keeps log finite
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._gauss_spare = r * math.sin(theta)
        return r * math.cos(theta)

    def uniform_array(self, shape: tuple[int, ...], low: float, high: float) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.uniform(low, high)
        return out.reshape(shape)

    def normal_array(self, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.normal()
        return out.reshape(shape)

    def fork(self, tag: int) -> "Xoshiro256pp":
        """Child generator with a stream derived from this one plus a tag."""
        return Xoshiro256pp(derive_seed(self.next_u64(), tag))
