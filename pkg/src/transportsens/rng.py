"""Deterministic, parallelism-safe random streams.

Every stochastic component draws from a counter-based Philox generator whose
128-bit key is a hash of (seed, *stream path). Streams are therefore
independent of execution order and of the number of worker processes.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, *path: int | str) -> int:
    """Derive a 128-bit Philox key from a seed and a stream path."""
    payload = repr((int(seed),) + tuple(path)).encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=16).digest()
    return int.from_bytes(digest, "little")


def keyed_rng(seed: int, *path: int | str) -> np.random.Generator:
    """A Generator whose stream depends only on (seed, *path)."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *path)))
