"""
Deterministic random streams.

Every random draw in the package comes from a Philox counter-based generator
keyed by the run seed plus a tuple of integer stream keys, so chains and
replicates get independent, reproducible streams regardless of the order in
which they run.
"""

import numpy as np

RNG_ALGORITHM = "philox-4x64/seedsequence/v1"

# Stream domains
NUTS_CHAIN = 1
SIMULATION = 2
REPLICATE = 3
HOLDOUT = 4
PREDICTIVE = 5


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Build the generator for stream ``keys`` under ``seed``.

    Args:
        seed: Non-negative run seed
        *keys: Integer stream path, e.g. ``(NUTS_CHAIN, chain_index)``

    Returns:
        A fresh ``numpy.random.Generator`` backed by Philox
    """
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seed and stream keys must be non-negative")
    sequence = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(sequence))
