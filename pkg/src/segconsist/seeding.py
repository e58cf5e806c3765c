"""Deterministic rng sub-streams.

Every consumer gets its own ``numpy.random.Generator`` derived from a master
seed plus a key path, so results never depend on scheduling order and attack
streams never share state with detection streams.
"""
import zlib

import numpy as np


def _key(k):
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def substream(seed, *keys):
    """Generator for ``(seed, *keys)``; string keys are hashed with CRC32."""
    return np.random.default_rng(np.random.SeedSequence([_key(seed), *(_key(k) for k in keys)]))


def as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
