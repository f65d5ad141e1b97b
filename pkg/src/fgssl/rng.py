"""Hierarchical, counter-based random streams.

Every stochastic decision in the toolkit is drawn from a Philox generator keyed
by ``(master_seed, *path)``.  Because the key path fully determines the stream,
generating view 7 of image 123 at step 40 never depends on what else was in the
batch, or on the order views were produced.
"""

from __future__ import annotations

import zlib
from typing import Union

import numpy as np

SeedLike = Union[int, tuple, np.random.SeedSequence]


def _path_key(part) -> int:
    if isinstance(part, str):
        # stable across processes, unlike hash()
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream path entries must be non-negative, got {part}")
        return int(part)
    raise TypeError(f"unsupported stream path entry {part!r}")


def seed_sequence(seed: SeedLike, *path) -> np.random.SeedSequence:
    """Return the SeedSequence for ``seed`` extended by ``path``.

    ``seed`` may itself be a tuple ``(master, *prefix)`` so that keys can be
    passed around as plain values and extended later.
    """
    if isinstance(seed, np.random.SeedSequence):
        base_entropy = seed.entropy
        prefix = tuple(seed.spawn_key)
    elif isinstance(seed, tuple):
        if not seed:
            raise ValueError("empty seed tuple")
        base_entropy = _path_key(seed[0])
        prefix = tuple(_path_key(p) for p in seed[1:])
    else:
        base_entropy = _path_key(seed)
        prefix = ()
    key = prefix + tuple(_path_key(p) for p in path)
    return np.random.SeedSequence(entropy=base_entropy, spawn_key=key)


def stream(seed: SeedLike, *path) -> np.random.Generator:
    """A fresh Philox generator for the stream named by ``(seed, *path)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *path)))


def key_tuple(seed: SeedLike, *path) -> tuple:
    """Flatten ``(seed, *path)`` to a plain tuple of ints, for logging/provenance."""
    ss = seed_sequence(seed, *path)
    return (int(ss.entropy),) + tuple(int(k) for k in ss.spawn_key)
