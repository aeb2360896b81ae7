"""Reproducible random streams from a single master seed.

Philox is counter-based, so independent named substreams are cheap and the
results do not depend on draw order across streams.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, *path) -> np.random.Generator:
    """Independent generator for (seed, path...), stable across runs."""
    tag = ":".join(str(p) for p in path).encode()
    digest = hashlib.sha256(tag).digest()
    key = int.from_bytes(digest[:16], "little")
    mixed = ((int(seed) << 64) ^ key) & ((1 << 128) - 1)
    return np.random.Generator(np.random.Philox(key=mixed))
