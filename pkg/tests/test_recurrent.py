"""LSTM and ConvLSTM cells: gate formulas, init contracts, equivalence."""

import numpy as np
import pytest

import refseg.tensor as te
from refseg.recurrent import (FORGET_BIAS_INIT, ConvLstmParams, LstmParams,
                              ShapeError, bilstm_run, convlstm_step,
                              init_convlstm_params, init_lstm_params,
                              lstm_step, zero_state)
from refseg.tensor import Tensor


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_oracle(x, h, c, w_in, w_hid, bias):
    """Direct gate arithmetic: pre-activations split as (i, f, o, g)."""
    n = h.shape[0]
    pre = w_in @ x + w_hid @ h + bias
    i, f, o, g = (pre[:n], pre[n:2 * n], pre[2 * n:3 * n], pre[3 * n:])
    c_new = sigmoid(f) * c + sigmoid(i) * np.tanh(g)
    h_new = sigmoid(o) * np.tanh(c_new)
    return h_new, c_new


def test_lstm_step_matches_oracle():
    rng = np.random.default_rng(0)
    p = init_lstm_params(rng, 5, 4)
    x = rng.standard_normal(5)
    h0 = rng.standard_normal(4)
    c0 = rng.standard_normal(4)
    state = lstm_step(Tensor(x), type(zero_state((4,)))(
        hidden=Tensor(h0), cell=Tensor(c0)), p)
    h_ref, c_ref = lstm_oracle(x, h0, c0, p.w_input.data, p.w_hidden.data,
                               p.bias.data)
    np.testing.assert_allclose(state.hidden.data, h_ref, rtol=1e-12)
    np.testing.assert_allclose(state.cell.data, c_ref, rtol=1e-12)


def test_lstm_hidden_bounded():
    rng = np.random.default_rng(1)
    p = init_lstm_params(rng, 3, 6)
    state = zero_state((6,))
    for _ in range(50):
        x = Tensor(rng.standard_normal(3) * 10.0)
        state = lstm_step(x, state, p)
        assert np.all(np.abs(state.hidden.data) < 1.0)


def test_forget_bias_plus_one():
    for init, hid in ((init_lstm_params(np.random.default_rng(2), 4, 7), 7),
                      (init_convlstm_params(np.random.default_rng(3), 4, 5), 5)):
        b = init.bias.data
        assert b.shape == (4 * hid,)
        np.testing.assert_array_equal(b[hid:2 * hid], FORGET_BIAS_INIT)
        np.testing.assert_array_equal(b[:hid], 0.0)
        np.testing.assert_array_equal(b[2 * hid:], 0.0)


def test_lstm_weight_init_bounds():
    rng = np.random.default_rng(4)
    p = init_lstm_params(rng, 9, 16)
    assert np.all(np.abs(p.w_input.data) <= 1.0 / 3.0)  # 1/sqrt(9)
    assert np.all(np.abs(p.w_hidden.data) <= 0.25)      # 1/sqrt(16)
    # values should actually fill the range, not sit near zero
    assert np.abs(p.w_input.data).max() > 0.3


def test_convlstm_weight_init_bounds():
    rng = np.random.default_rng(5)
    p = init_convlstm_params(rng, 7, 4, kernel_size=3)
    bound = 1.0 / np.sqrt((7 + 4) * 9)
    assert p.kernel.shape == (16, 11, 3, 3)
    assert np.all(np.abs(p.kernel.data) <= bound)
    assert np.abs(p.kernel.data).max() > 0.9 * bound


def test_convlstm_even_kernel_rejected():
    with pytest.raises(ShapeError):
        init_convlstm_params(np.random.default_rng(0), 3, 3, kernel_size=4)


def test_convlstm_preserves_spatial_shape():
    rng = np.random.default_rng(6)
    p = init_convlstm_params(rng, 3, 5, kernel_size=3)
    x = Tensor(rng.standard_normal((3, 9, 11)))
    state = convlstm_step(x, zero_state((5, 9, 11)), p)
    assert state.hidden.shape == (5, 9, 11)
    assert state.cell.shape == (5, 9, 11)


def test_convlstm_1x1_equals_lstm():
    """A ConvLSTM on a 1x1 grid with 1x1 kernels is exactly an LSTM."""
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n_in, n_hid = 4, 3
        lstm = init_lstm_params(rng, n_in, n_hid)
        w = np.concatenate([lstm.w_input.data, lstm.w_hidden.data], axis=1)
        conv = ConvLstmParams(
            kernel=Tensor(w.reshape(4 * n_hid, n_in + n_hid, 1, 1)),
            bias=Tensor(lstm.bias.data))
        x = rng.standard_normal(n_in)
        h = rng.standard_normal(n_hid)
        c = rng.standard_normal(n_hid)

        st_l = lstm_step(Tensor(x), type(zero_state((n_hid,)))(
            hidden=Tensor(h), cell=Tensor(c)), lstm)
        st_c = convlstm_step(
            Tensor(x.reshape(n_in, 1, 1)),
            type(zero_state((n_hid, 1, 1)))(hidden=Tensor(h.reshape(n_hid, 1, 1)),
                                            cell=Tensor(c.reshape(n_hid, 1, 1))),
            conv)
        np.testing.assert_allclose(st_c.hidden.data.reshape(-1),
                                   st_l.hidden.data, atol=1e-12)
        np.testing.assert_allclose(st_c.cell.data.reshape(-1),
                                   st_l.cell.data, atol=1e-12)


def test_convlstm_translation_equivariance():
    """Shifting the input shifts the state, away from padding effects."""
    rng = np.random.default_rng(7)
    p = init_convlstm_params(rng, 2, 3)
    x = np.zeros((2, 12, 12))
    x[:, 3:6, 3:6] = rng.standard_normal((2, 3, 3))
    shifted = np.roll(x, 2, axis=2)
    a = convlstm_step(Tensor(x), zero_state((3, 12, 12)), p)
    b = convlstm_step(Tensor(shifted), zero_state((3, 12, 12)), p)
    np.testing.assert_allclose(np.roll(a.hidden.data, 2, axis=2)[:, 4:8, 6:10],
                               b.hidden.data[:, 4:8, 6:10], atol=1e-12)


def test_bilstm_concatenates_directions():
    rng = np.random.default_rng(8)
    fwd = init_lstm_params(rng, 3, 4)
    bwd = init_lstm_params(rng, 3, 4)
    seq = rng.standard_normal((5, 3))
    out = bilstm_run(Tensor(seq), fwd, bwd)
    assert out.shape == (5, 8)

    # forward half of step t must not depend on later inputs
    seq2 = seq.copy()
    seq2[4] += 1.0
    out2 = bilstm_run(Tensor(seq2), fwd, bwd)
    np.testing.assert_allclose(out.data[:4, :4], out2.data[:4, :4], atol=1e-12)
    # backward half of the last step must not depend on earlier inputs
    seq3 = seq.copy()
    seq3[0] += 1.0
    out3 = bilstm_run(Tensor(seq3), fwd, bwd)
    np.testing.assert_allclose(out.data[4, 4:], out3.data[4, 4:], atol=1e-12)


def test_bilstm_reversal_symmetry():
    """Swapping directions and reversing the sequence mirrors the output."""
    rng = np.random.default_rng(9)
    fwd = init_lstm_params(rng, 3, 4)
    bwd = init_lstm_params(rng, 3, 4)
    seq = rng.standard_normal((6, 3))
    out = bilstm_run(Tensor(seq), fwd, bwd).data
    mirrored = bilstm_run(Tensor(seq[::-1]), bwd, fwd).data
    np.testing.assert_allclose(out[:, :4], mirrored[::-1, 4:], atol=1e-12)
    np.testing.assert_allclose(out[:, 4:], mirrored[::-1, :4], atol=1e-12)
