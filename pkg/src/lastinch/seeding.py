"""Per-run RNG streams derived from a master seed.

Each run gets ``PCG64(splitmix64(master) ^ splitmix64(index))`` style mixing,
so streams are independent of execution order and worker count.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix_seed(master: int, index: int) -> int:
    return splitmix64(splitmix64(int(master) & MASK64) ^ (int(index) & MASK64))


def rng_for(master: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(mix_seed(master, index)))
