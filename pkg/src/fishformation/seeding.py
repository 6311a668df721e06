"""Named, independent random streams derived from one master seed."""

import zlib

import numpy as np


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Generator for sub-stream ``name`` of ``seed``; ``extra`` integers refine it further."""
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())] + [int(e) & 0xFFFFFFFF for e in extra]
    return np.random.default_rng(np.random.SeedSequence(key))


def child_seed(seed: int, name: str, *extra: int) -> int:
    """A 32-bit integer seed for sub-stream ``name``."""
    return int(stream(seed, name, *extra).integers(0, 2**31 - 1))
