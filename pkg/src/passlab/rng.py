"""Seed splitting.

Every random stream is derived from one 64-bit master seed.  A stream is
identified by a domain tag (a short string) plus integer indices; the tag is
hashed with CRC-32 and, together with the indices, becomes the ``spawn_key``
of a :class:`numpy.random.SeedSequence` whose entropy is the master seed.
Streams with different (tag, indices) are statistically independent and do
not depend on the order in which they are requested.
"""

from __future__ import annotations

import zlib

import numpy as np

MAX_SEED = 2**64 - 1


def substream(seed: int, tag: str, *index: int) -> np.random.Generator:
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    key = (zlib.crc32(tag.encode("utf-8")),) + tuple(int(i) for i in index)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def child_seed(seed: int, tag: str, *index: int) -> int:
    """Derive a new 64-bit seed (used to tag dataset samples)."""
    return int(substream(seed, tag, *index).integers(0, 2**63, dtype=np.int64))
