"""Named sub-seeds derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np


def subseed(root: int, name: str) -> int:
    """Deterministic 32-bit seed for component ``name`` under ``root``."""
    seq = np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return int(seq.generate_state(1)[0])


def rng(root: int, name: str) -> np.random.Generator:
    return np.random.default_rng(subseed(root, name))
