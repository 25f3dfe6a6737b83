"""Deterministic stream derivation.

Every random draw in the package comes from a generator keyed by a tuple of
non-negative integers, so any block of trials can be regenerated on its own
and parallel runs reproduce serial ones exactly.
"""
import numpy as np

MAX_SEED = 2**64 - 1


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([check_seed(seed), *map(int, keys)])))
