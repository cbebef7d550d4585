"""Seeded, splittable RNG streams. No global generator anywhere."""

import zlib

import numpy as np


def _key_ints(keys):
    out = []
    for k in keys:
        if isinstance(k, (int, np.integer)):
            out.append(int(k) & 0xFFFFFFFF)
        elif isinstance(k, str):
            out.append(zlib.crc32(k.encode("utf-8")))
        else:
            raise TypeError(f"rng key must be int or str, got {type(k)!r}")
    return out


def seed_stream(*keys):
    """Deterministic generator derived from a tuple of ints/strings.

    Distinct key tuples give statistically independent streams, so per-user
    streams like seed_stream(seed, "sample", user_id) make results
    independent of batching order.
    """
    if not keys:
        raise ValueError("seed_stream needs at least one key")
    return np.random.default_rng(np.random.SeedSequence(_key_ints(keys)))
