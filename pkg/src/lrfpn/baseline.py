"""A plain feature pyramid written straight, with no enrichment modules.

This is the reference the full model must collapse to when every flag is
off.  It is deliberately an independent forward implementation (not a
wrapper around LrFpnModel), so the equivalence check in the ablation
runner compares two separately written graphs bit for bit.
"""

from __future__ import annotations

from . import kernels as K
from .flags import Flags
from .pyramid import LrFpnModel
from .tensor import Param, Tensor


class PlainFpn:
    """Stride-2 backbone, 1x1 laterals, top-down sums, two extra levels.

    Parameters are copied (not shared) from a source model so both nets
    start from identical values but update independently.
    """

    def __init__(self, source: LrFpnModel):
        self.spec = source.spec
        src = source.param_dict()

        def clone(src_name: str, new_name: str) -> Param:
            return Param(new_name, src[src_name].value.copy())

        self.backbone = [
            (
                clone(f"backbone.{i}.conv.weight", f"backbone.{i}.conv.weight"),
                clone(f"backbone.{i}.conv.bias", f"backbone.{i}.conv.bias"),
            )
            for i in range(1, 5)
        ]
        self.lateral = {
            i: (
                clone(f"cim.{i}.proj.weight", f"lateral.{i}.weight"),
                clone(f"cim.{i}.proj.bias", f"lateral.{i}.bias"),
            )
            for i in (2, 3, 4)
        }
        self.extra = {
            lvl: (
                clone(f"extra.{lvl}.weight", f"extra.{lvl}.weight"),
                clone(f"extra.{lvl}.bias", f"extra.{lvl}.bias"),
            )
            for lvl in (4, 5)
        }
        self.head_w = clone("head.weight", "head.weight")
        self.head_b = clone("head.bias", "head.bias")

    def params(self) -> list[Param]:
        out: list[Param] = []
        for w, b in self.backbone:
            out.extend([w, b])
        for i in (2, 3, 4):
            out.extend(self.lateral[i])
        for lvl in (4, 5):
            out.extend(self.extra[lvl])
        out.extend([self.head_w, self.head_b])
        return out

    def forward(self, x: Tensor, flags: Flags | None = None) -> dict[str, Tensor]:
        # flags accepted for interface parity with LrFpnModel; ignored
        feats = {}
        t = x
        for i, (w, b) in enumerate(self.backbone, start=1):
            t = K.relu(K.conv2d(t, w, b, stride=2, padding=1))
            feats[i] = t

        lat = {i: K.conv2d(feats[i], *self.lateral[i]) for i in (2, 3, 4)}
        p3 = lat[4]
        p2 = K.add(lat[3], K.upsample_nearest2x(p3))
        p1 = K.add(lat[2], K.upsample_nearest2x(p2))
        p4 = K.conv2d(p3, *self.extra[4], stride=2, padding=1)
        p5 = K.conv2d(p4, *self.extra[5], stride=2, padding=1)
        pred = K.sigmoid(K.conv2d(p1, self.head_w, self.head_b))
        return {"P1": p1, "P2": p2, "P3": p3, "P4": p4, "P5": p5, "pred": pred}
