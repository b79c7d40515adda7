"""The full detection neck: backbone stub, enriched laterals, pyramid.

A four-stage stride-2 backbone produces maps F1..F4.  F1, the shallowest
and spatially richest map, feeds the pooling extractor (spiem); levels
F2..F4 pass through interaction laterals (cim) into a top-down pyramid:

  P3 = f4(F4 + F4')            deepest lateral, no top-down term
  P2 = f3(F3 + F3') + up2(P3)
  P1 = f2(F2 + F2') + up2(P2)
  P4 = conv3x3_s2(P3),  P5 = conv3x3_s2(P4)

where Fi' is the extractor's enrichment and fi the lateral module.  A
1x1 head plus sigmoid on P1 scores each cell for object presence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .cim import Cim
from .errors import ConfigError, ShapeError, TrainingDiverged
from .flags import Flags
from .init import he_uniform, seeded_rng
from .spiem import Spiem
from .tensor import Param, Tape, Tensor, backward, sgd_step, zero_grads


@dataclass(frozen=True)
class ModelSpec:
    """Static architecture description; see DEFAULT_SPEC and MINI_SPEC."""

    in_channels: int = 3
    in_h: int = 64
    in_w: int = 64
    widths: tuple[int, int, int, int] = (8, 16, 32, 64)
    d: int = 16
    reduction: int = 4

    def validate(self) -> None:
        if self.in_channels < 1 or self.d < 1 or self.reduction < 1:
            raise ConfigError("in_channels, d, and reduction must be positive")
        if len(self.widths) != 4 or any(c < 1 for c in self.widths):
            raise ConfigError(f"widths must be four positive ints, got {self.widths}")
        for axis, size in (("height", self.in_h), ("width", self.in_w)):
            cur = size
            for stage in range(1, 5):
                if cur % 2:
                    raise ConfigError(
                        f"input {axis} {size} does not halve cleanly: stage {stage} "
                        f"would shrink {cur} to {cur / 2}"
                    )
                cur //= 2

    def feature_shapes(self) -> dict[int, tuple[int, int, int]]:
        """(channels, h, w) of F1..F4."""
        return {
            i: (self.widths[i - 1], self.in_h >> i, self.in_w >> i)
            for i in range(1, 5)
        }

    def pyramid_shapes(self) -> dict[str, tuple[int, int, int]]:
        """(channels, h, w) of P1..P5."""
        feats = self.feature_shapes()
        shapes = {}
        for lvl, feat in ((1, 2), (2, 3), (3, 4)):
            _, h, w = feats[feat]
            shapes[f"P{lvl}"] = (self.d, h, w)
        _, h, w = shapes["P3"]
        shapes["P4"] = (self.d, (h + 2 - 3) // 2 + 1, (w + 2 - 3) // 2 + 1)
        _, h, w = shapes["P4"]
        shapes["P5"] = (self.d, (h + 2 - 3) // 2 + 1, (w + 2 - 3) // 2 + 1)
        return shapes


DEFAULT_SPEC = ModelSpec()
MINI_SPEC = ModelSpec(in_h=16, in_w=16, widths=(2, 4, 8, 16), d=4)

SPECS = {"default": DEFAULT_SPEC, "mini": MINI_SPEC}

LATERAL_LEVELS = (2, 3, 4)


class LrFpnModel:
    """Parameters plus the forward graph for one architecture spec."""

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype: type = np.float64):
        spec.validate()
        self.spec = spec
        self.dtype = dtype
        feats = spec.feature_shapes()

        def conv_param(name: str, shape: tuple[int, ...]) -> Param:
            fan_in = shape[1] * shape[2] * shape[3]
            return Param(name, he_uniform(seeded_rng(seed, name), shape, fan_in, dtype))

        self.backbone: list[tuple[Param, Param]] = []
        c_prev = spec.in_channels
        for i, c in enumerate(spec.widths, start=1):
            w = conv_param(f"backbone.{i}.conv.weight", (c, c_prev, 3, 3))
            b = Param(f"backbone.{i}.conv.bias", np.zeros((1, c, 1, 1), dtype=dtype))
            self.backbone.append((w, b))
            c_prev = c

        c1 = feats[1][0]
        self.spiem = Spiem(c1, {i: feats[i] for i in LATERAL_LEVELS}, seed=seed, dtype=dtype)
        self.cims = {
            i: Cim(i, feats[i][0], spec.d, seed=seed, reduction=spec.reduction, dtype=dtype)
            for i in LATERAL_LEVELS
        }

        self.extra: dict[int, tuple[Param, Param]] = {}
        for lvl in (4, 5):
            w = conv_param(f"extra.{lvl}.weight", (spec.d, spec.d, 3, 3))
            b = Param(f"extra.{lvl}.bias", np.zeros((1, spec.d, 1, 1), dtype=dtype))
            self.extra[lvl] = (w, b)

        self.head_w = conv_param("head.weight", (1, spec.d, 1, 1))
        self.head_b = Param("head.bias", np.zeros((1, 1, 1, 1), dtype=dtype))

    def params(self) -> list[Param]:
        out: list[Param] = []
        for w, b in self.backbone:
            out.extend([w, b])
        out.extend(self.spiem.params())
        for i in LATERAL_LEVELS:
            out.extend(self.cims[i].params())
        for lvl in (4, 5):
            out.extend(self.extra[lvl])
        out.extend([self.head_w, self.head_b])
        return out

    def param_dict(self) -> dict[str, Param]:
        return {p.name: p for p in self.params()}

    def features(self, x: Tensor) -> dict[int, Tensor]:
        spec = self.spec
        if x.shape[1:] != (spec.in_channels, spec.in_h, spec.in_w):
            raise ShapeError(
                f"input must be (N, {spec.in_channels}, {spec.in_h}, {spec.in_w}), got {x.shape}"
            )
        feats = {}
        t = x
        for i, (w, b) in enumerate(self.backbone, start=1):
            t = K.relu(K.conv2d(t, w, b, stride=2, padding=1))
            feats[i] = t
        return feats

    def forward(self, x: Tensor, flags: Flags) -> dict[str, Tensor]:
        """P1..P5 and the sigmoid head score map on P1."""
        flags = flags.normalized()
        feats = self.features(x)
        enrich = self.spiem.contributes(flags)

        lat = {}
        for i in LATERAL_LEVELS:
            src = feats[i]
            if enrich:
                src = K.add(src, self.spiem.forward(feats[1], i, flags))
            lat[i] = self.cims[i].forward(src, flags)

        p3 = lat[4]
        p2 = K.add(lat[3], K.upsample_nearest2x(p3))
        p1 = K.add(lat[2], K.upsample_nearest2x(p2))
        p4 = K.conv2d(p3, *self.extra[4], stride=2, padding=1)
        p5 = K.conv2d(p4, *self.extra[5], stride=2, padding=1)
        pred = K.sigmoid(K.conv2d(p1, self.head_w, self.head_b))
        return {"P1": p1, "P2": p2, "P3": p3, "P4": p4, "P5": p5, "pred": pred}


def forward_loss(model: LrFpnModel, x: np.ndarray, target: np.ndarray, flags: Flags):
    """One forward pass plus BCE against the P1-resolution heatmap."""
    outs = model.forward(Tensor(x), flags)
    loss = K.bce_loss(outs["pred"], target)
    return loss, outs


def gradcheck_objective(model: LrFpnModel, x: np.ndarray, target: np.ndarray, flags: Flags) -> Tensor:
    """BCE plus small quadratic terms on P4 and P5.

    The head only reads P1, so without the extra terms the P4/P5 conv
    parameters would get exactly zero gradient and a finite-difference
    probe there would test nothing.
    """
    loss, outs = forward_loss(model, x, target, flags)
    for lvl in ("P4", "P5"):
        p = outs[lvl]
        loss = K.add(loss, K.scale(K.mean_all(K.hadamard(p, p)), 0.05))
    return loss


def dampen_params(model: LrFpnModel, factor: float = 0.5) -> None:
    """Scale every parameter in place.

    Fresh weights at these tiny widths can push head logits deep into
    sigmoid saturation, where the clipped output is flat and no finite
    difference can see the analytic slope.  Gradient probing therefore
    happens at a scaled-down, well-conditioned point of the same graph.
    """
    for p in model.params():
        p.value *= factor


def train_toy(
    model: LrFpnModel,
    flags: Flags,
    batches: list[tuple[np.ndarray, np.ndarray]],
    steps: int = 300,
    lr: float = 0.01,
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
) -> list[float]:
    """Plain SGD on cycled batches; returns the per-step loss trace.

    The recorded loss at each step is measured before that step's update,
    so trace[0] is the untrained model's loss.
    """
    if not batches:
        raise ConfigError("train_toy needs at least one batch")
    params = model.params()
    losses: list[float] = []
    for step in range(steps):
        x, t = batches[step % len(batches)]
        with Tape() as tape:
            loss, _ = forward_loss(model, x, t, flags)
            backward(tape, loss)
        value = float(loss.value[0, 0, 0, 0])
        if not np.isfinite(value):
            raise TrainingDiverged(step)
        losses.append(value)
        sgd_step(params, lr=lr, momentum=momentum, weight_decay=weight_decay)
        zero_grads(params)
    return losses
