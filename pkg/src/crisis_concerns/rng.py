"""Deterministic, splittable random streams derived from one 64-bit seed.

Every consumer asks for a stream by a path of keys, e.g.
``derive_rng(seed, "forest", 3)``.  Streams with different paths are
statistically independent and do not depend on the order in which they are
requested, so parallel schedules give identical results.
"""

from __future__ import annotations

import zlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("negative stream key")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def seed_sequence(seed: int, *path) -> np.random.SeedSequence:
    if not 0 <= int(seed) <= SEED_MASK:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key_to_int(k) for k in path))


def derive_rng(seed: int, *path) -> np.random.Generator:
    """Return a PCG64 generator for the stream named by ``path``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *path)))


def derive_seed(seed: int, *path) -> int:
    """A child 64-bit seed, for handing to components that take a plain int."""
    return int(seed_sequence(seed, *path).generate_state(1, np.uint64)[0])
