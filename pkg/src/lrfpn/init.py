"""Deterministic parameter initialisation.

Each parameter gets its own PCG64 stream derived from (seed, crc32(name)),
so adding or reordering parameters never shifts another parameter's values.
"""

from __future__ import annotations

import zlib

import numpy as np


def seeded_rng(seed: int, tag: str = "") -> np.random.Generator:
    """A generator keyed by the run seed and a stable string tag."""
    keys = [int(seed)]
    if tag:
        keys.append(zlib.crc32(tag.encode("utf-8")))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(keys)))


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype: type = np.float64) -> np.ndarray:
    """Uniform(-limit, limit) with limit = sqrt(6 / fan_in)."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
