"""Seed derivation.

Every random draw in the package goes through :func:`rng` with an explicit
64-bit seed and a tuple of stream indices, so draws made for one purpose can
never shift the draws made for another.
"""
from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1

# Sub-stream indices under a per-file seed.
STREAM_F0 = 0
STREAM_FX = 1


def rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``seed`` and ``stream``."""
    seq = np.random.SeedSequence(int(seed) & MASK64, spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(seq))


def child_seed(seed: int, *stream: int) -> int:
    """A 64-bit seed for a sub-stream, for handing to another seeded function."""
    seq = np.random.SeedSequence(int(seed) & MASK64, spawn_key=tuple(int(s) for s in stream))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def file_seed(master_seed: int, relpath: str) -> int:
    """Stable 64-bit seed for one input file, keyed by its canonical relative path."""
    key = f"{int(master_seed) & MASK64}\x00{relpath}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
