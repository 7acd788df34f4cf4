"""Seeded random streams.

Every random draw in the package goes through :func:`make_rng`, which builds a
``numpy.random.Generator`` on the PCG64 bit generator (64-bit state, 128-bit
internal LCG with XSL-RR output).  Independent streams are derived from one
user seed through ``numpy.random.SeedSequence(entropy=seed, spawn_key=key)``,
so stream ``key`` is a pure function of ``(seed, key)`` and does not depend on
the order in which streams are requested or on the number of worker processes.
"""

import numpy as np

# stream tags; stable integers so derived streams never change between releases
STREAM_SPLIT = 1
STREAM_PROGNOSTIC = 2
STREAM_MATCHING = 3
STREAM_SIMULATE = 4
STREAM_REPLICATE = 5
STREAM_EVALUATE = 6


def _key(seed, key):
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))


def make_rng(seed, *key):
    """Return a PCG64 generator for stream ``key`` under ``seed``."""
    return np.random.Generator(np.random.PCG64(_key(seed, key)))


def derive_seed(seed, *key):
    """Return a 63-bit integer seed for stream ``key`` under ``seed``."""
    state = _key(seed, key).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


def fresh_seed():
    """Draw a seed from OS entropy (used when the caller did not pin one)."""
    return int(np.random.SeedSequence().entropy % (1 << 32))
