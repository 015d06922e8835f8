"""Seeded random streams.

Every stochastic operation takes a ``numpy.random.Generator`` explicitly. Child
streams are derived from a parent ``SeedSequence`` so that a fixed root seed
gives the same draws regardless of how work is scheduled across workers.
"""
from typing import List, Optional, Union
import numpy as np

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


def make_rng(seed: SeedLike = None) -> np.random.Generator:
    """Build a PCG64 generator from an int, a SeedSequence or an existing generator"""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    if seed is None:
        from ustat.config import settings
        seed = settings.DEFAULT_SEED
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def seed_of(seed: SeedLike) -> Optional[int]:
    """The integer seed to record in outputs, when there is one"""
    if isinstance(seed, (int, np.integer)) and not isinstance(seed, bool):
        return int(seed)
    return None


def spawn_seeds(seed: int, count: int) -> List[np.random.SeedSequence]:
    return np.random.SeedSequence(int(seed)).spawn(count)


def uniform_big_int(upper: int, rng: np.random.Generator) -> int:
    """Uniform integer in [0, upper) for arbitrarily large Python ints"""
    if upper <= 0:
        raise ValueError("upper bound must be positive")
    if upper <= np.iinfo(np.int64).max:
        return int(rng.integers(0, upper))
    n_bits = (upper - 1).bit_length()
    n_bytes = (n_bits + 7) // 8
    excess = n_bytes * 8 - n_bits
    while True:
        value = int.from_bytes(rng.bytes(n_bytes), "big") >> excess
        if value < upper:
            return value
