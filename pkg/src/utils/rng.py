"""
Seed handling.

All random draws go through numpy Generators built from a SeedSequence, so a
fixed seed replays exactly. Sub-streams are keyed by a tuple of integers
(replication, permutation, prefix length, ...) instead of drawing child seeds
from a parent stream, which keeps results independent of worker count.
"""

import numpy as np


def get_rng(seed, *key):
    """
    Build a PCG64 generator for `seed`, optionally keyed to a sub-stream.

    Args:
        seed (int | None): Root seed. None draws fresh OS entropy.
        *key (int): Sub-stream coordinates.

    Returns:
        numpy.random.Generator
    """
    if seed is None:
        return np.random.default_rng()
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(sequence))


def derive_seed(seed, *key):
    """Return a 63-bit integer seed for the sub-stream `key` of `seed`."""
    if seed is None:
        return None
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
