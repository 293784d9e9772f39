"""Portable random stream for scenario generation.

SplitMix64 with 53-bit uniforms and inverse-CDF exponentials.  The stream is
pinned down completely so scenarios can be regenerated bit-for-bit outside
Python.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform on ``[0, 1)`` from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def exponential(self) -> float:
        return -math.log1p(-self.uniform())

    def dirichlet_ones(self, size: int) -> list[float]:
        """Flat Dirichlet draw: normalised Exp(1) cells."""
        e = [self.exponential() for _ in range(size)]
        total = sum(e)
        return [v / total for v in e]
