"""Deterministic seed streams.

Every random decision in the package draws from a seed derived from a base
seed plus a tuple of integer/string keys, so that independent purposes
(pool generation, test sets, ensemble members, probes) never share a stream.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode())


def derive_seed(base: int, *keys) -> int:
    entropy = [int(base) & 0xFFFFFFFF] + [_key_to_int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])


def rng(base: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base, *keys))
