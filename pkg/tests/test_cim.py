"""Lateral interaction module: branches, gates, flag algebra."""

import numpy as np

from helpers import check_grads

from lrfpn import kernels as K
from lrfpn.cim import Cim
from lrfpn.flags import Flags
from lrfpn.tensor import Tensor


def rand_input(shape=(2, 4, 6, 6), seed=0) -> Tensor:
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


class TestParams:
    def test_count_formula(self):
        c, d, r = 8, 16, 4
        m = Cim(1, c, d, seed=0, reduction=r)
        h = max(1, c // r)
        total = sum(p.value.size for p in m.params())
        assert total == 9 * c + 9 * c + h * c + h + c * 2 * h + c + d * c + d

    def test_hidden_floor_is_one(self):
        assert Cim(1, 2, 4, seed=0, reduction=4).hidden == 1
        assert Cim(1, 16, 4, seed=0, reduction=4).hidden == 4

    def test_param_names(self):
        names = {p.name for p in Cim(2, 4, 8, seed=0).params()}
        assert names == {
            "cim.2.dw", "cim.2.dwd",
            "cim.2.fc1.weight", "cim.2.fc1.bias",
            "cim.2.fc2.weight", "cim.2.fc2.bias",
            "cim.2.proj.weight", "cim.2.proj.bias",
        }


class TestFlagAlgebra:
    def test_all_off_is_plain_projection(self):
        m = Cim(1, 4, 6, seed=1)
        x = rand_input()
        out = m.forward(x, Flags())
        plain = K.conv2d(x, m.proj_w, m.proj_b)
        assert np.array_equal(out.value, plain.value)

    def test_li_ni_branches_are_additive(self):
        m = Cim(1, 4, 6, seed=2)
        x = rand_input(seed=2)
        both = m.interact(x, Flags(si=True, li=True, ni=True)).value
        li = m.interact(x, Flags(si=True, li=True)).value
        ni = m.interact(x, Flags(si=True, ni=True)).value
        assert np.max(np.abs(both - (li + ni))) <= 1e-12

    def test_li_without_si_is_passthrough(self):
        m = Cim(1, 4, 6, seed=3)
        x = rand_input(seed=3)
        out = m.interact(x, Flags(li=True, ni=True))
        assert out is x

    def test_zeroed_fc2_gives_three_halves_x(self):
        # gate = sigmoid(0) = 1/2, so the channel branch is x/2 + x
        m = Cim(1, 4, 6, seed=4)
        m.fc2_w.value[...] = 0.0
        m.fc2_b.value[...] = 0.0
        x = rand_input(seed=4)
        out = m.interact(x, Flags(ci=True))
        assert np.array_equal(out.value, 1.5 * x.value)


class TestReceptiveField:
    def _center_response(self, flags: Flags, offset: tuple[int, int]) -> float:
        # 9x9 zero input with a single spike at Chebyshev distance 2
        m = Cim(1, 1, 1, seed=5)
        v = np.zeros((1, 1, 9, 9))
        v[0, 0, 4 + offset[0], 4 + offset[1]] = 1.0
        out = m.interact(Tensor(v), flags)
        return float(out.value[0, 0, 4, 4])

    def test_dilated_branch_reaches_distance_two(self):
        assert self._center_response(Flags(si=True, ni=True), (2, 0)) != 0.0
        assert self._center_response(Flags(si=True, ni=True), (0, -2)) != 0.0

    def test_dense_branch_does_not(self):
        assert self._center_response(Flags(si=True, li=True), (2, 0)) == 0.0
        assert self._center_response(Flags(si=True, li=True), (-2, 2)) == 0.0

    def test_dense_branch_sees_distance_one(self):
        assert self._center_response(Flags(si=True, li=True), (1, 1)) != 0.0


class TestChannelGate:
    def test_shape_and_open_interval(self):
        m = Cim(1, 4, 6, seed=6)
        for seed in range(20):
            g = m.channel_gate(rand_input(seed=seed)).value
            assert g.shape == (2, 4, 1, 1)
            assert np.all(g > 0.0) and np.all(g < 1.0)

    def test_extreme_inputs_stay_inside(self):
        m = Cim(1, 4, 6, seed=7)
        x = Tensor(np.full((1, 4, 5, 5), 1e4))
        g = m.channel_gate(x).value
        assert np.all(g > 0.0) and np.all(g < 1.0)


class TestGradients:
    def test_full_module_matches_finite_differences(self):
        m = Cim(1, 4, 5, seed=8)
        x = rand_input(shape=(2, 4, 5, 5), seed=8)
        check_grads(
            lambda: m.forward(x, Flags(si=True, li=True, ni=True, ci=True)),
            [x] + m.params(),
        )
