"""Seeded random number generation.

Every random draw in the package flows through a PCG64 generator built here
from explicit integer keys, so fold plans, weight initialization, and batch
shuffles reproduce bit-for-bit across platforms for a fixed seed.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def make_rng(*keys: int) -> np.random.Generator:
    """PCG64 generator seeded by the given keys, each masked to 64 bits.

    Masking lets callers pass negative or XOR-derived seeds without
    tripping SeedSequence's non-negative requirement.
    """
    return np.random.default_rng([int(k) & _MASK64 for k in keys])
