"""Synthetic scenes dense with small bright objects.

Each scene is Gaussian clutter with a handful of tiny axis-aligned
squares added at random positions; every square is brighter than the
background on all channels.  The training target is a binary occupancy
grid at the finest pyramid level's resolution: a cell is 1 when any
object overlaps it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .init import seeded_rng


@dataclass(frozen=True)
class SceneSpec:
    h: int = 64
    w: int = 64
    channels: int = 3
    min_objects: int = 6
    max_objects: int = 14
    min_size: int = 2
    max_size: int = 5
    noise: float = 0.15

    def validate(self) -> None:
        if self.min_objects < 1 or self.max_objects < self.min_objects:
            raise ConfigError("need 1 <= min_objects <= max_objects")
        if self.min_size < 1 or self.max_size < self.min_size:
            raise ConfigError("need 1 <= min_size <= max_size")
        if self.max_size > min(self.h, self.w):
            raise ConfigError("objects must fit inside the scene")


def make_scene(rng: np.random.Generator, spec: SceneSpec) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    """One (C, H, W) image and its object list as (row, col, size)."""
    spec.validate()
    img = rng.normal(0.0, spec.noise, size=(spec.channels, spec.h, spec.w))
    count = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    objects = []
    for _ in range(count):
        size = int(rng.integers(spec.min_size, spec.max_size + 1))
        r = int(rng.integers(0, spec.h - size + 1))
        c = int(rng.integers(0, spec.w - size + 1))
        gain = rng.uniform(0.8, 1.6)
        mix = rng.uniform(0.6, 1.0, size=(spec.channels, 1, 1))
        img[:, r : r + size, c : c + size] += gain * mix
        objects.append((r, c, size))
    return img, objects


def occupancy(objects: list[tuple[int, int, int]], spec: SceneSpec, target_hw: tuple[int, int]) -> np.ndarray:
    """(1, th, tw) binary grid marking cells any object overlaps."""
    th, tw = target_hw
    if th < 1 or tw < 1 or spec.h % th or spec.w % tw:
        raise ConfigError(f"target grid {target_hw} must evenly divide the scene {spec.h}x{spec.w}")
    fh, fw = spec.h // th, spec.w // tw
    grid = np.zeros((1, th, tw))
    for r, c, size in objects:
        grid[0, r // fh : (r + size - 1) // fh + 1, c // fw : (c + size - 1) // fw + 1] = 1.0
    return grid


def make_batch(
    rng: np.random.Generator,
    spec: SceneSpec,
    batch_size: int,
    target_hw: tuple[int, int],
    dtype: type = np.float64,
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked scenes (N, C, H, W) and targets (N, 1, th, tw)."""
    xs, ts = [], []
    for _ in range(batch_size):
        img, objects = make_scene(rng, spec)
        xs.append(img)
        ts.append(occupancy(objects, spec, target_hw))
    return np.stack(xs).astype(dtype), np.stack(ts).astype(dtype)


def make_batches(
    seed: int,
    spec: SceneSpec,
    n_batches: int,
    batch_size: int,
    target_hw: tuple[int, int],
    dtype: type = np.float64,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """A deterministic list of batches keyed only by the seed."""
    rng = seeded_rng(seed, "scenes")
    return [make_batch(rng, spec, batch_size, target_hw, dtype) for _ in range(n_batches)]
