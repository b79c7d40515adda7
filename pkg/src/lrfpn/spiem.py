"""Shallow feature extraction for every pyramid level.

The shallowest backbone map carries the most precise localisation signal,
so it is pooled down to each level's resolution twice: an average pool
keeps positional context, a max pool keeps the strongest responses.  Both
pooled maps get their own learnable elementwise weight (ones at init, so
the module starts as a plain pool sum), are added, and a 1x1 projection
matches the level's channel count.
"""

from __future__ import annotations

import numpy as np

from . import kernels as K
from .errors import ShapeError
from .flags import Flags
from .init import he_uniform, seeded_rng
from .tensor import Param, Tensor


class Spiem:
    """Per-level weighted pooling of the shallow map F1.

    targets maps a level index to its (channels, height, width).  Each
    level owns two weight maps over the pooled F1 and one projection.
    """

    def __init__(
        self,
        c1: int,
        targets: dict[int, tuple[int, int, int]],
        seed: int = 0,
        dtype: type = np.float64,
    ):
        self.c1 = c1
        self.targets = dict(targets)
        self._levels: dict[int, dict[str, Param]] = {}
        for lvl, (c, h, w) in self.targets.items():
            rng = seeded_rng(seed, f"spiem.{lvl}.proj.weight")
            self._levels[lvl] = {
                "wbar": Param(f"spiem.{lvl}.wbar", np.ones((1, c1, h, w), dtype=dtype)),
                "wtilde": Param(f"spiem.{lvl}.wtilde", np.ones((1, c1, h, w), dtype=dtype)),
                "proj_w": Param(f"spiem.{lvl}.proj.weight", he_uniform(rng, (c, c1, 1, 1), c1, dtype)),
                "proj_b": Param(f"spiem.{lvl}.proj.bias", np.zeros((1, c, 1, 1), dtype=dtype)),
            }

    def params(self) -> list[Param]:
        out = []
        for lvl in sorted(self._levels):
            p = self._levels[lvl]
            out.extend([p["wbar"], p["wtilde"], p["proj_w"], p["proj_b"]])
        return out

    @staticmethod
    def contributes(flags: Flags) -> bool:
        return flags.pp or flags.sp

    def pooled(self, f1: Tensor, level: int, flags: Flags) -> Tensor:
        """Weighted sum of the enabled pooling branches at a level's size."""
        if level not in self._levels:
            raise ShapeError(f"no pooling target for level {level}")
        if f1.shape[1] != self.c1:
            raise ShapeError(f"expected {self.c1} channels in the shallow map, got {f1.shape[1]}")
        _, h, w = self.targets[level]
        p = self._levels[level]
        parts = []
        if flags.pp:
            parts.append(K.weight_map(K.adaptive_avg_pool2d(f1, (h, w)), p["wbar"]))
        if flags.sp:
            parts.append(K.weight_map(K.adaptive_max_pool2d(f1, (h, w)), p["wtilde"]))
        if not parts:
            raise ShapeError("pooled() needs pp or sp enabled; check contributes() first")
        return parts[0] if len(parts) == 1 else K.add(parts[0], parts[1])

    def forward(self, f1: Tensor, level: int, flags: Flags) -> Tensor:
        """Level enrichment map, or an exact zero when pp and sp are off.

        The zero case suppresses the projection bias too, so a disabled
        module contributes nothing at all.
        """
        if not self.contributes(flags):
            c, h, w = self.targets[level]
            return Tensor(np.zeros((f1.shape[0], c, h, w), dtype=f1.value.dtype))
        p = self._levels[level]
        return K.conv2d(self.pooled(f1, level, flags), p["proj_w"], p["proj_b"])
