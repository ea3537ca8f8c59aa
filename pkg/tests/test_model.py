"""Encoder forward: visibility guarantees, type infusion, head shapes/grads."""

import numpy as np
import pytest

from chqsum import autodiff as ad
from chqsum.autodiff import Tensor, tape
from chqsum.corpus import build_mask_matrix, pack
from chqsum.gradcheck import check_gradients
from chqsum.model import (
    FF_MULT, ForwardResult, ModelConfig, forward, infuse_explicit, init_params,
    param_count, qtype_head,
)

TOL = 1e-4
VOCAB = 30


def tiny_setup(qta_mode="none", seed=0):
    config = ModelConfig.tiny(VOCAB, qta_mode=qta_mode)
    params = init_params(config, np.random.default_rng(seed))
    return config, params


def packed_inputs(q_len=3, s_len=4):
    ex = pack(list(range(10, 10 + q_len)), list(range(20, 20 + s_len)))
    mask = build_mask_matrix(ex.q_span, ex.s_span)
    return ex, mask


class TestForwardBasics:
    def test_output_shapes(self):
        config, params = tiny_setup()
        ex, mask = packed_inputs()
        out = forward(config, params, ex.ids, ex.segments, mask)
        n = len(ex.ids)
        assert out.hidden.shape == (n, config.hidden)
        assert out.logits.shape == (n, VOCAB)
        assert out.qtype_logits is None

    def test_deterministic(self):
        config, params = tiny_setup()
        ex, mask = packed_inputs()
        a = forward(config, params, ex.ids, ex.segments, mask)
        b = forward(config, params, ex.ids, ex.segments, mask)
        np.testing.assert_array_equal(a.logits.data, b.logits.data)

    def test_too_long_rejected(self):
        config, params = tiny_setup()
        ids = list(range(5)) * 20
        with pytest.raises(ValueError, match="max_positions"):
            forward(config, params, ids, [0] * len(ids),
                    np.zeros((len(ids), len(ids))))

    def test_qtype_mode_mismatch(self):
        config, params = tiny_setup()
        ex, mask = packed_inputs()
        with pytest.raises(ValueError, match="qta_mode"):
            forward(config, params, ex.ids, ex.segments, mask, qtype=1)
        config_e, params_e = tiny_setup(qta_mode="explicit")
        with pytest.raises(ValueError, match="requires"):
            forward(config_e, params_e, ex.ids, ex.segments, mask)


class TestAttentionVisibility:
    def test_question_rows_never_attend_summary(self):
        config, params = tiny_setup()
        ex, mask = packed_inputs(q_len=4, s_len=5)
        attn = []
        forward(config, params, ex.ids, ex.segments, mask, attn_out=attn)
        assert len(attn) == config.layers * config.heads
        for a in attn:
            assert np.all(a[:ex.q_span, ex.q_span:] == 0.0)
            np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-9)

    def test_causality_by_perturbation(self):
        config, params = tiny_setup(seed=3)
        ex, mask = packed_inputs(q_len=3, s_len=6)
        base = forward(config, params, ex.ids, ex.segments, mask).logits.data
        for j in range(1, ex.s_span - 1):
            mutated = list(ex.ids)
            pos = ex.q_span + j
            mutated[pos] = (mutated[pos] + 1) % VOCAB
            out = forward(config, params, mutated, ex.segments, mask).logits.data
            np.testing.assert_array_equal(out[:pos], base[:pos])
            assert not np.array_equal(out[pos], base[pos])


class TestExplicitInfusion:
    def test_zero_rows_reduce_to_tanh(self):
        rng = np.random.default_rng(1)
        h = Tensor(rng.normal(size=(5, 8)))
        q_e = Tensor(np.zeros((7, 8)))
        out = infuse_explicit(h, q_e, 3)
        np.testing.assert_allclose(out.data, np.tanh(h.data), atol=1e-12)

    def test_broadcast_row(self):
        v = np.arange(8, dtype=float) * 0.1
        h = Tensor(np.zeros((4, 8)))
        q_e = Tensor(np.tile(v, (7, 1)))
        out = infuse_explicit(h, q_e, 2)
        for row in out.data:
            np.testing.assert_allclose(row, np.tanh(v), atol=1e-12)

    def test_output_bounded(self):
        rng = np.random.default_rng(2)
        out = infuse_explicit(Tensor(rng.normal(0, 10, (6, 8))),
                              Tensor(rng.normal(0, 10, (7, 8))), 0)
        assert np.all(out.data > -1.0) and np.all(out.data < 1.0)

    def test_index_out_of_range(self):
        h = Tensor(np.zeros((2, 8)))
        q_e = Tensor(np.zeros((7, 8)))
        with pytest.raises(IndexError):
            infuse_explicit(h, q_e, 7)

    def test_gradient_wrt_type_row(self):
        rng = np.random.default_rng(3)
        h = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
        q_e = Tensor(rng.normal(size=(7, 8)), requires_grad=True)
        w = rng.normal(size=(4, 8))

        def loss():
            out = infuse_explicit(h, q_e, 5)
            prod = ad.multiply(out, Tensor(w))
            ones_r = Tensor(np.ones((1, 4)))
            ones_c = Tensor(np.ones((8, 1)))
            return ad.matmul(ad.matmul(ones_r, prod), ones_c)

        assert check_gradients(loss, [h, q_e]) < TOL
        # analytic identity: grad of row j is sum_i (1 - out_i^2) * upstream_i
        with tape() as t:
            out = infuse_explicit(h, q_e, 5)
            prod = ad.multiply(out, Tensor(w))
            total = ad.matmul(ad.matmul(Tensor(np.ones((1, 4))), prod),
                              Tensor(np.ones((8, 1))))
            t.backward(total)
        expected_row = ((1.0 - out.data ** 2) * w).sum(axis=0)
        np.testing.assert_allclose(q_e.grad[5], expected_row, rtol=1e-10)
        assert np.all(q_e.grad[[0, 1, 2, 3, 4, 6]] == 0.0)


class TestQtypeHead:
    def test_zero_weights_uniform(self):
        h0 = Tensor(np.random.default_rng(4).normal(size=(1, 8)))
        zeros = lambda *s: Tensor(np.zeros(s))
        probs, hidden = qtype_head(h0, zeros(8, 8), zeros(8), zeros(8, 7),
                                   zeros(7))
        np.testing.assert_allclose(probs.data, np.full((1, 7), 1 / 7), atol=1e-12)
        np.testing.assert_array_equal(hidden.data, np.zeros((1, 8)))

    def test_distribution_sums_to_one(self):
        rng = np.random.default_rng(5)
        probs, _ = qtype_head(
            Tensor(rng.normal(size=(1, 8))),
            Tensor(rng.normal(size=(8, 8))), Tensor(rng.normal(size=8)),
            Tensor(rng.normal(size=(8, 7))), Tensor(rng.normal(size=7)))
        assert abs(probs.data.sum() - 1.0) < 1e-9

    def test_gradients_on_projections(self):
        rng = np.random.default_rng(6)
        h0 = Tensor(rng.normal(size=(1, 8)))
        w = Tensor(rng.normal(size=(8, 8)), requires_grad=True)
        b_h = Tensor(rng.normal(size=8), requires_grad=True)
        u = Tensor(rng.normal(size=(8, 7)), requires_grad=True)
        b_c = Tensor(rng.normal(size=7), requires_grad=True)

        def loss():
            probs, _ = qtype_head(h0, w, b_h, u, b_c)
            return ad.cross_entropy(probs, [0], [0])

        assert check_gradients(loss, [w, b_h, u, b_c]) < TOL


class TestImplicitMode:
    def test_qtype_logits_shape(self):
        config, params = tiny_setup(qta_mode="implicit")
        ex, mask = packed_inputs()
        out = forward(config, params, ex.ids, ex.segments, mask)
        assert out.qtype_logits is not None
        assert out.qtype_logits.shape == (1, 7)

    def test_zeroed_heads_uniform_type_loss(self):
        config, params = tiny_setup(qta_mode="implicit")
        for name in ("qt_w", "qt_bh", "qt_u", "qt_bc"):
            params[name].data[:] = 0.0
        ex, mask = packed_inputs()
        out = forward(config, params, ex.ids, ex.segments, mask)
        loss = ad.cross_entropy(out.qtype_logits, [2], [0])
        assert loss.item() == pytest.approx(np.log(7.0), abs=1e-12)


class TestParamCount:
    def test_tiny_preset_matches_closed_form(self):
        d, v, layers, max_pos, types = 8, VOCAB, 2, 64, 7
        per_layer = (2 * d            # first norm
                     + 3 * d * d      # query/key/value projections
                     + d * d + d      # attention output projection
                     + 2 * d          # second norm
                     + d * FF_MULT * d + FF_MULT * d
                     + FF_MULT * d * d + d)
        base = (v * d + max_pos * d + 2 * d
                + layers * per_layer
                + 2 * d
                + d * d + d + d * v + v)
        config, params = tiny_setup()
        assert param_count(params) == base
        config_e, params_e = tiny_setup(qta_mode="explicit")
        assert param_count(params_e) == base + types * d
        config_i, params_i = tiny_setup(qta_mode="implicit")
        assert param_count(params_i) == base + d * d + d + d * types + types

    def test_divisibility_enforced(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(vocab_size=10, hidden=10, heads=3)


class TestFullModelGradients:
    def test_all_parameters_pass_finite_differences(self):
        config, params = tiny_setup(qta_mode="implicit", seed=8)
        ex, mask = packed_inputs(q_len=2, s_len=3)
        positions = [ex.q_span, ex.q_span + 1]
        targets = [21, 22]

        def loss():
            out = forward(config, params, ex.ids, ex.segments, mask)
            return ad.add(ad.cross_entropy(out.logits, targets, positions),
                          ad.cross_entropy(out.qtype_logits, [3], [0]))

        err = check_gradients(loss, list(params.values()))
        assert err < TOL
