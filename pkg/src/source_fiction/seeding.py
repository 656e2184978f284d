"""Named random streams derived from one master seed.

Each consumer asks for its stream by name, so adding draws in one module never
shifts the numbers another module sees.
"""

import zlib

import numpy as np


def derive_seed(seed, *names):
    """Return a 63-bit integer seed for the stream ``names`` under ``seed``."""
    key = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for name in names:
        key.append(zlib.crc32(str(name).encode("utf-8")))
    state = np.random.SeedSequence(key).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def rng_for(seed, *names):
    return np.random.default_rng(derive_seed(seed, *names))
