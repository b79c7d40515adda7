"""Lateral connection with local, non-local, and channel interactions.

Replaces the plain 1x1 lateral convolution of a feature pyramid.  Three
parallel branches look at the incoming map before projection:

  li  dense 3x3 depthwise conv (neighbourhood mixing)
  ni  dilated 3x3 depthwise conv, dilation 2 (reaches two pixels out)
  ci  a gated residual: global avg and max summaries pass through a
      shared bottleneck FC, are concatenated, and a second FC plus
      sigmoid yields a per-channel gate g; the branch emits g * x + x

Enabled branch outputs are summed and projected by a 1x1 conv.  With no
branch enabled the input passes straight to the projection, making the
module exactly the plain lateral conv.
"""

from __future__ import annotations

import numpy as np

from . import kernels as K
from .flags import Flags
from .init import he_uniform, seeded_rng
from .tensor import Param, Tensor


class Cim:
    """One lateral module: c_in channels in, c_out channels out."""

    def __init__(
        self,
        level: int,
        c_in: int,
        c_out: int,
        seed: int = 0,
        reduction: int = 4,
        dtype: type = np.float64,
    ):
        self.level = level
        self.c_in = c_in
        self.c_out = c_out
        self.hidden = max(1, c_in // reduction)
        h = self.hidden

        def mk(tag: str, shape: tuple[int, ...], fan_in: int) -> Param:
            name = f"cim.{level}.{tag}"
            return Param(name, he_uniform(seeded_rng(seed, name), shape, fan_in, dtype))

        self.dw = mk("dw", (c_in, 1, 3, 3), 9)
        self.dwd = mk("dwd", (c_in, 1, 3, 3), 9)
        self.fc1_w = mk("fc1.weight", (h, c_in, 1, 1), c_in)
        self.fc1_b = Param(f"cim.{level}.fc1.bias", np.zeros((1, h, 1, 1), dtype=dtype))
        self.fc2_w = mk("fc2.weight", (c_in, 2 * h, 1, 1), 2 * h)
        self.fc2_b = Param(f"cim.{level}.fc2.bias", np.zeros((1, c_in, 1, 1), dtype=dtype))
        self.proj_w = mk("proj.weight", (c_out, c_in, 1, 1), c_in)
        self.proj_b = Param(f"cim.{level}.proj.bias", np.zeros((1, c_out, 1, 1), dtype=dtype))

    def params(self) -> list[Param]:
        return [
            self.dw, self.dwd,
            self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b,
            self.proj_w, self.proj_b,
        ]

    def channel_gate(self, x: Tensor) -> Tensor:
        """Per-channel sigmoid gate in (0, 1), shape (N, C, 1, 1)."""
        avg = K.relu(K.fully_connected(K.global_avg_pool2d(x), self.fc1_w, self.fc1_b))
        mx = K.relu(K.fully_connected(K.global_max_pool2d(x), self.fc1_w, self.fc1_b))
        both = K.concat_channels(avg, mx)
        return K.sigmoid(K.fully_connected(both, self.fc2_w, self.fc2_b))

    def interact(self, x: Tensor, flags: Flags) -> Tensor:
        """Sum of the enabled branches; x itself when none is enabled."""
        flags = flags.normalized()
        parts: list[Tensor] = []
        if flags.li:
            parts.append(K.depthwise_conv2d(x, self.dw, dilation=1))
        if flags.ni:
            parts.append(K.depthwise_conv2d(x, self.dwd, dilation=2))
        if flags.ci:
            gated = K.broadcast_scale(x, self.channel_gate(x))
            parts.append(K.add(gated, x))
        if not parts:
            return x
        out = parts[0]
        for p in parts[1:]:
            out = K.add(out, p)
        return out

    def forward(self, x: Tensor, flags: Flags) -> Tensor:
        return K.conv2d(self.interact(x, flags), self.proj_w, self.proj_b)
