import numpy as np


def derive_seed(*keys: int) -> int:
    """Stable 32-bit seed for a tuple of integer keys (base seed, fold, split, replicate, ...)"""
    sequence = np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def rng_for(*keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*keys))
