"""Spatial attention gate, level decoder, mask head, BCE loss."""

import numpy as np
import pytest

import refseg.tensor as te
from refseg.decoder import (PROB_EPS, attention_gate, bce_loss, decode,
                            init_spatial_attention, predict_mask,
                            spatial_attention)
from refseg.recurrent import init_convlstm_params
from refseg.tensor import ShapeError, Tensor


def test_gate_in_unit_interval_and_broadcast():
    rng = np.random.default_rng(0)
    p = init_spatial_attention(rng, channels=5, kernel_size=7)
    m = Tensor(rng.standard_normal((5, 9, 9)) * 3.0)
    gate = attention_gate(m, p).data
    assert gate.shape == (1, 9, 9)
    assert np.all(gate > 0.0) and np.all(gate < 1.0)
    gated = spatial_attention(m, p).data
    np.testing.assert_allclose(gated, gate * m.data, rtol=1e-12)


def test_gate_attenuates_never_amplifies():
    rng = np.random.default_rng(1)
    p = init_spatial_attention(rng, channels=3, kernel_size=7)
    m = Tensor(rng.standard_normal((3, 6, 6)))
    gated = spatial_attention(m, p).data
    assert np.all(np.abs(gated) <= np.abs(m.data) + 1e-15)


def test_gate_channel_mismatch_raises():
    rng = np.random.default_rng(2)
    p = init_spatial_attention(rng, channels=3)
    with pytest.raises(ShapeError):
        spatial_attention(Tensor(np.zeros((4, 5, 5))), p)


def test_decode_requires_matching_levels():
    rng = np.random.default_rng(3)
    p = init_convlstm_params(rng, 4, 2)
    with pytest.raises(ShapeError):
        decode([Tensor(np.zeros((4, 2, 2))), Tensor(np.zeros((4, 4, 4)))], p)
    with pytest.raises(ShapeError):
        decode([], p)


def test_decode_is_order_sensitive():
    rng = np.random.default_rng(4)
    p = init_convlstm_params(rng, 3, 4)
    levels = [Tensor(rng.standard_normal((3, 5, 5))) for _ in range(3)]
    fwd = decode(levels, p)
    rev = decode(levels[::-1], p)
    assert np.abs(fwd.data - rev.data).max() > 1e-9


def test_decode_keep_steps_returns_trajectory():
    rng = np.random.default_rng(5)
    p = init_convlstm_params(rng, 3, 4)
    levels = [Tensor(rng.standard_normal((3, 5, 5))) for _ in range(3)]
    final, steps = decode(levels, p, keep_steps=True)
    assert len(steps) == 3
    np.testing.assert_array_equal(final.data, steps[-1].data)


def test_decode_composition_matches_manual_steps():
    rng = np.random.default_rng(6)
    p = init_convlstm_params(rng, 2, 3)
    levels = [Tensor(rng.standard_normal((2, 4, 4))) for _ in range(2)]
    from refseg.recurrent import convlstm_step, zero_state
    state = zero_state((3, 4, 4))
    for lv in levels:
        state = convlstm_step(lv, state, p)
    np.testing.assert_array_equal(decode(levels, p).data, state.hidden.data)


# ---------------------------------------------------------------------------
# mask head


def test_predict_mask_shapes_and_threshold():
    rng = np.random.default_rng(7)
    hidden = Tensor(rng.standard_normal((4, 8, 8)))
    head = Tensor(rng.standard_normal((1, 4, 1, 1)))
    out = predict_mask(hidden, head, 32, 32)
    assert out.prob.shape == (1, 32, 32)
    assert out.logits.shape == (1, 32, 32)
    assert out.mask.shape == (32, 32)
    assert out.mask.dtype == bool
    np.testing.assert_array_equal(out.mask, out.prob.data[0] >= 0.5)
    np.testing.assert_allclose(out.prob.data,
                               1.0 / (1.0 + np.exp(-out.logits.data)),
                               rtol=1e-12)


def test_zero_head_gives_uniform_half_probability():
    hidden = Tensor(np.random.default_rng(8).standard_normal((4, 8, 8)))
    head = te.zeros((1, 4, 1, 1))
    out = predict_mask(hidden, head, 16, 16)
    np.testing.assert_array_equal(out.prob.data, 0.5)
    np.testing.assert_array_equal(out.logits.data, 0.0)


def test_predict_mask_head_is_bias_free_1x1():
    hidden = Tensor(np.zeros((4, 8, 8)))
    with pytest.raises(ShapeError):
        predict_mask(hidden, Tensor(np.zeros((1, 4, 3, 3))), 16, 16)
    with pytest.raises(ShapeError):
        predict_mask(hidden, Tensor(np.zeros((2, 4, 1, 1))), 16, 16)


def test_predict_mask_interpolates_logits_not_probs():
    # upsample happens before the sigmoid: probs are sigmoid of blended logits
    hidden = Tensor(np.array([[[-4.0, 4.0]]]))
    head = Tensor(np.ones((1, 1, 1, 1)))
    out = predict_mask(hidden, head, 1, 4)
    np.testing.assert_allclose(out.logits.data[0, 0], [-4.0, -2.0, 2.0, 4.0],
                               atol=1e-12)
    np.testing.assert_allclose(out.prob.data[0, 0],
                               1.0 / (1.0 + np.exp(np.array([4.0, 2.0, -2.0, -4.0]))),
                               rtol=1e-12)


# ---------------------------------------------------------------------------
# loss


def test_bce_hand_value():
    prob = Tensor(np.array([[0.8, 0.3]]))
    target = Tensor(np.array([[1.0, 0.0]]))
    expected = -(np.log(0.8) + np.log(0.7)) / 2.0
    assert abs(bce_loss(prob, target).item() - expected) < 1e-12


def test_bce_nonnegative_and_zero_floor():
    rng = np.random.default_rng(9)
    prob = Tensor(rng.random((1, 6, 6)) * 0.98 + 0.01)
    target = Tensor((rng.random((1, 6, 6)) > 0.5).astype(float))
    assert bce_loss(prob, target).item() >= 0.0
    perfect = bce_loss(Tensor(target.data.copy()), target).item()
    # clamping at PROB_EPS keeps the floor near, but not exactly, zero
    assert perfect <= -np.log(1.0 - PROB_EPS) + 1e-12


def test_bce_uninformed_prediction_is_ln2():
    prob = te.full((1, 4, 4), 0.5)
    target = Tensor((np.random.default_rng(10).random((1, 4, 4)) > 0.5).astype(float))
    assert abs(bce_loss(prob, target).item() - np.log(2.0)) < 1e-12


def test_bce_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        bce_loss(te.full((1, 4, 4), 0.5), te.full((1, 5, 5), 0.0))


def test_bce_gradient_direction():
    # raising the probability of a positive pixel lowers the loss
    logits = Tensor(np.zeros((1, 2, 2)), requires_grad=True)
    target = Tensor(np.array([[[1.0, 0.0], [0.0, 0.0]]]))
    loss = bce_loss(te.sigmoid(logits), target)
    grads = te.backward(loss)
    g = grads[logits].data[0]
    assert g[0, 0] < 0.0          # positive pixel wants a larger logit
    assert np.all(g.ravel()[1:] > 0.0)
