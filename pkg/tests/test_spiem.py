"""Shallow extractor: pooling branches, weight maps, flag behaviour."""

import numpy as np
import pytest

from helpers import check_grads

from lrfpn.errors import ShapeError
from lrfpn.flags import Flags
from lrfpn.spiem import Spiem
from lrfpn.tensor import Tape, Tensor


def ramp_f1() -> Tensor:
    return Tensor(np.arange(16.0).reshape(1, 1, 4, 4))


def identity_proj(sp: Spiem, level: int) -> None:
    """Make the 1x1 projection a passthrough for a c1 == c level."""
    p = sp._levels[level]
    p["proj_w"].value[...] = np.eye(p["proj_w"].shape[0]).reshape(p["proj_w"].shape)
    p["proj_b"].value[...] = 0.0


class TestParams:
    def test_count_per_level(self):
        c1 = 3
        sp = Spiem(c1, {1: (5, 4, 4), 2: (7, 2, 2)}, seed=0)
        sizes = {p.name: p.value.size for p in sp.params()}
        for lvl, (c, h, w) in sp.targets.items():
            level_total = sum(v for k, v in sizes.items() if k.startswith(f"spiem.{lvl}."))
            assert level_total == 2 * c1 * h * w + c * c1 + c

    def test_weight_maps_start_at_one(self):
        sp = Spiem(2, {1: (2, 3, 3)}, seed=1)
        p = sp._levels[1]
        assert np.all(p["wbar"].value == 1.0)
        assert np.all(p["wtilde"].value == 1.0)
        assert not p["proj_b"].value.any()

    def test_param_names(self):
        sp = Spiem(2, {3: (4, 2, 2)}, seed=0)
        names = {p.name for p in sp.params()}
        assert names == {
            "spiem.3.wbar", "spiem.3.wtilde",
            "spiem.3.proj.weight", "spiem.3.proj.bias",
        }


class TestForward:
    def test_pooled_sum_on_ramp(self):
        # avg [[2.5,4.5],[10.5,12.5]] plus max [[5,7],[13,15]], unit weights
        sp = Spiem(1, {2: (1, 2, 2)}, seed=0)
        out = sp.pooled(ramp_f1(), 2, Flags(pp=True, sp=True))
        np.testing.assert_array_equal(out.value[0, 0], [[7.5, 11.5], [23.5, 27.5]])

    def test_forward_with_identity_projection(self):
        sp = Spiem(1, {2: (1, 2, 2)}, seed=0)
        identity_proj(sp, 2)
        out = sp.forward(ramp_f1(), 2, Flags(pp=True, sp=True))
        np.testing.assert_array_equal(out.value[0, 0], [[7.5, 11.5], [23.5, 27.5]])

    def test_pp_only_is_average(self):
        sp = Spiem(1, {2: (1, 2, 2)}, seed=0)
        out = sp.pooled(ramp_f1(), 2, Flags(pp=True))
        np.testing.assert_array_equal(out.value[0, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_sp_only_is_max(self):
        sp = Spiem(1, {2: (1, 2, 2)}, seed=0)
        out = sp.pooled(ramp_f1(), 2, Flags(sp=True))
        np.testing.assert_array_equal(out.value[0, 0], [[5.0, 7.0], [13.0, 15.0]])

    def test_weight_maps_scale_branches(self):
        sp = Spiem(1, {2: (1, 2, 2)}, seed=0)
        sp._levels[2]["wbar"].value[...] = 2.0
        out = sp.pooled(ramp_f1(), 2, Flags(pp=True, sp=True))
        np.testing.assert_array_equal(out.value[0, 0], [[10.0, 16.0], [34.0, 40.0]])

    def test_disabled_module_is_exact_zero_and_untaped(self):
        sp = Spiem(2, {1: (3, 2, 2)}, seed=0)
        f1 = Tensor(np.random.default_rng(0).standard_normal((2, 2, 4, 4)))
        with Tape() as tape:
            out = sp.forward(f1, 1, Flags())
        assert out.shape == (2, 3, 2, 2)
        assert not out.value.any()
        assert len(tape) == 0

    def test_channel_mismatch_rejected(self):
        sp = Spiem(2, {1: (3, 2, 2)}, seed=0)
        with pytest.raises(ShapeError):
            sp.forward(Tensor(np.zeros((1, 3, 4, 4))), 1, Flags(pp=True))

    def test_grads_flow_to_maps_and_projection(self):
        sp = Spiem(2, {1: (3, 2, 2)}, seed=3)
        f1 = Tensor(np.random.default_rng(4).standard_normal((2, 2, 4, 4)))
        p = sp._levels[1]
        check_grads(
            lambda: sp.forward(f1, 1, Flags(pp=True, sp=True)),
            [f1, p["wbar"], p["wtilde"], p["proj_w"], p["proj_b"]],
        )
