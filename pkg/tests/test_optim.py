"""Adam, gradient clipping, and the linear learning-rate schedule."""

import numpy as np
import pytest

from chqsum.autodiff import Tensor
from chqsum.optim import AdamState, adam_step, clip_global_norm, decayed_lr


class TestSchedule:
    def test_midpoint(self):
        assert decayed_lr(7e-5, 10_000, 20_000) == pytest.approx(3.5e-5)

    def test_start_and_end(self):
        assert decayed_lr(7e-5, 0, 20_000) == 7e-5
        assert decayed_lr(7e-5, 20_000, 20_000) == 0.0

    def test_clamped_past_end(self):
        assert decayed_lr(7e-5, 30_000, 20_000) == 0.0


class TestClipGlobalNorm:
    def test_scales_above_threshold(self):
        g = np.array([3.0, 4.0])
        factor = clip_global_norm([g], 1.0)
        assert factor == pytest.approx(0.2)
        np.testing.assert_allclose(g, [0.6, 0.8])

    def test_below_threshold_unchanged(self):
        g = np.array([0.3, 0.4])
        factor = clip_global_norm([g], 1.0)
        assert factor == 1.0
        np.testing.assert_array_equal(g, [0.3, 0.4])

    def test_zero_gradients_unchanged(self):
        g = np.zeros(4)
        assert clip_global_norm([g], 1.0) == 1.0
        np.testing.assert_array_equal(g, np.zeros(4))

    def test_joint_norm_over_several_tensors(self):
        a = np.full((2, 2), 1.0)
        b = np.full(5, 1.0)
        clip_global_norm([a, b], 1.5)
        total = np.sqrt((a * a).sum() + (b * b).sum())
        assert total == pytest.approx(1.5)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        g1 = rng.normal(0.0, 5.0, size=(3, 3))
        g2 = rng.normal(0.0, 5.0, size=7)
        clip_global_norm([g1, g2], 1.0)
        once = (g1.copy(), g2.copy())
        clip_global_norm([g1, g2], 1.0)
        np.testing.assert_allclose(g1, once[0], rtol=1e-12)
        np.testing.assert_allclose(g2, once[1], rtol=1e-12)

    def test_rejects_nonpositive_max(self):
        with pytest.raises(ValueError):
            clip_global_norm([np.ones(2)], 0.0)


class TestAdam:
    def _single_param(self, value=0.0):
        return {"w": Tensor(np.array([value]), requires_grad=True)}

    def test_first_step_closed_form(self):
        params = self._single_param(0.0)
        state = AdamState.for_params(params, lr0=1e-3, total_steps=100)
        params["w"].grad = np.array([1.0])
        adam_step(state, params)
        assert params["w"].data[0] == pytest.approx(-1e-3, rel=1e-6)

    def test_zero_grad_fresh_state_no_change(self):
        params = self._single_param(0.7)
        state = AdamState.for_params(params, lr0=1e-3, total_steps=100)
        params["w"].grad = np.array([0.0])
        adam_step(state, params)
        assert params["w"].data[0] == 0.7

    def test_missing_grad_treated_as_zero(self):
        params = self._single_param(0.7)
        state = AdamState.for_params(params, lr0=1e-3, total_steps=100)
        adam_step(state, params)
        assert params["w"].data[0] == 0.7

    def test_schedule_endpoint_freezes_params(self):
        params = self._single_param(0.5)
        state = AdamState.for_params(params, lr0=1e-3, total_steps=10)
        state.step = 10
        params["w"].grad = np.array([123.0])
        adam_step(state, params)
        assert params["w"].data[0] == 0.5

    def test_moment_shapes_match_params(self):
        rng = np.random.default_rng(1)
        params = {
            "a": Tensor(rng.normal(size=(3, 4)), requires_grad=True),
            "b": Tensor(rng.normal(size=7), requires_grad=True),
        }
        state = AdamState.for_params(params, lr0=1e-3, total_steps=10)
        for name, p in params.items():
            assert state.m[name].shape == p.data.shape
            assert state.v[name].shape == p.data.shape

    def test_descends_on_quadratic(self):
        # minimize 0.5 * w^2: gradient is w, Adam should reduce |w|
        params = self._single_param(1.0)
        state = AdamState.for_params(params, lr0=0.1, total_steps=1000)
        for _ in range(200):
            params["w"].grad = params["w"].data.copy()
            adam_step(state, params)
        assert abs(params["w"].data[0]) < 0.05
