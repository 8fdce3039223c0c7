"""Deterministic randomness: named substreams from one base seed.

Every subsystem (code generation, sampling, key material, noise, the
attack-phase coin) draws from its own stream, so changing how many values
one subsystem consumes can never shift another subsystem's draws.  Streams
are Philox counter-based generators keyed by hashing the (seed, path)
pair, which makes a stream's identity purely positional.
"""

from __future__ import annotations

import hashlib

import numpy as np


def child_seed(base_seed: int, *path) -> int:
    """Stable 128-bit child seed for a named substream."""
    text = ":".join([str(int(base_seed))] + [str(part) for part in path])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def substream(base_seed: int, *path) -> np.random.Generator:
    """Independent counter-based generator for one named subsystem."""
    return np.random.Generator(np.random.Philox(child_seed(base_seed, *path)))


def row_seeds(rng: np.random.Generator, count: int) -> np.ndarray:
    """Per-row 64-bit seeds for the packed-matrix kernels."""
    return rng.integers(0, 2**64, size=count, dtype=np.uint64)
