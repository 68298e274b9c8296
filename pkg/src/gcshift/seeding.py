"""Derived random streams.

Every consumer of randomness asks for a generator keyed by the master seed
plus a tuple of integers or string tags, so no code path touches global RNG
state and parallel runs reproduce serial ones.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: int | str) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"seed components must be non-negative, got {part}")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def derive_seed(seed: int, *path: int | str) -> np.random.SeedSequence:
    return np.random.SeedSequence([_key(seed), *(_key(p) for p in path)])


def make_rng(seed: int, *path: int | str) -> np.random.Generator:
    """Counter-based (Philox) generator for ``seed`` and a purpose path."""
    return np.random.Generator(np.random.Philox(derive_seed(seed, *path)))


def child_seed(seed: int, *path: int | str) -> int:
    """A plain 32-bit integer seed derived from ``seed`` and ``path``."""
    return int(derive_seed(seed, *path).generate_state(1)[0])
