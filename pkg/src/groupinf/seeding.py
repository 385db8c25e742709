"""Deterministic RNG derivation.

All randomness in a run flows from a single master seed. Each consumer
derives its own stream as ``rng(master_seed, STREAM_X, *extra)``, which
feeds the integer tuple into numpy's SeedSequence. The stream constants
below are the documented counter scheme; never reuse a constant for a
new purpose.
"""

import numpy as np

STREAM_SPLIT = 1
STREAM_BLOBS = 2
STREAM_GROUPS = 3
STREAM_TRAIN = 4
STREAM_POOL = 5
STREAM_RANDOM_SELECT = 6
STREAM_RETRAIN = 7


def rng(master_seed: int, *stream: int) -> np.random.Generator:
    """Generator for the given stream of the master seed."""
    return np.random.default_rng([int(master_seed), *[int(s) for s in stream]])
