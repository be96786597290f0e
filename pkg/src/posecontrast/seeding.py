"""Named random sub-streams derived from one integer seed."""

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``(seed, name, *extra)``; stable across runs."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, stream_key(name),
                                  *(int(e) for e in extra)])
