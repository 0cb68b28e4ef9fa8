"""Counter-based random streams keyed by integer tuples.

Every stochastic quantity is drawn from a Philox stream whose key is derived
from ``(master_seed, *lane)``. Draws therefore depend only on the lane, never on
evaluation order or on how work is split between processes.
"""
from __future__ import annotations

import hashlib

import numpy as np

LAYER_ANGULAR = 1
LAYER_RADIAL = 2
LAYER_CUBE = 3
LANE_FRAME = 4
LANE_DATUM = 5
LANE_TRIAL = 6


def zigzag(i):
    """Map a signed integer to a non-negative one (0, -1, 1, -2, ... -> 0, 1, 2, 3, ...)."""
    i = int(i)
    return 2 * i if i >= 0 else -2 * i - 1


def _entropy(master_seed):
    if isinstance(master_seed, (int, np.integer)):
        if master_seed < 0:
            raise ValueError("seeds must be non-negative")
        return int(master_seed)
    digest = hashlib.sha256(str(master_seed).encode()).digest()
    return int.from_bytes(digest[:16], "little")


def generator(master_seed, *lane):
    """Independent ``numpy.random.Generator`` for a lane of non-negative ints."""
    key = tuple(int(x) for x in lane)
    if any(x < 0 for x in key):
        raise ValueError(f"lane entries must be non-negative, got {key}")
    ss = np.random.SeedSequence(entropy=_entropy(master_seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
