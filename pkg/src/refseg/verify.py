"""Built-in verification suites: gradients, invariants, oracles.

Three suites, each a list of named checks that return pass/fail plus a
one-line detail. The grad suite compares every differentiable operation
and the full composed pipeline against central finite differences; the
invariants suite asserts the algebraic properties the architecture
promises (attention normalization, modulated-cell degenerate cases,
metric conventions); the oracle suite compares fast implementations
against naive reference ones written with plain loops.

All oracles here are self-contained so the suites keep their meaning
even if the main implementations change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import tensor as te
from .dataset import SceneConfig, Shape, gen_sample, parse_expression, resolve
from .decoder import (SpatialAttentionParams, bce_loss, decode, predict_mask,
                      spatial_attention)
from .language import (AttentionHead, LanguageEncoder, TokenSequence, Vocabulary,
                       init_attention_head, init_language_encoder, word_attention)
from .metrics import build_report, iou, prec_at
from .model import ModelConfig
from .multimodal import encode, modulated_convlstm_step, spatial_coords
from .recurrent import (ConvLstmParams, LstmParams, RecurrentState, bilstm_run,
                        convlstm_gates, convlstm_step, init_convlstm_params,
                        init_lstm_params, lstm_step, zero_state)
from .tensor import TapeError, Tensor, backward, grad_check, no_grad
from .training import AdamState, TrainConfig, adam_step, init_adam, poly_lr

GRAD_TOL = 1e-4
SUITE_NAMES = ("grad", "invariants", "oracle")


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


def _randt(rng: np.random.Generator, *shape, grad: bool = True) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=grad)


def _const(rng: np.random.Generator, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


# ---------------------------------------------------------------------------
# grad suite


def _weighted_sum(t: Tensor, w: Tensor) -> Tensor:
    return te.tensor_sum(te.mul(t, w))


def _grad_cases() -> List[Tuple[str, Callable[[np.random.Generator], Tuple]]]:
    """Each builder returns (f, x, probe_count or None)."""

    def c_add(rng):
        y = _const(rng, 3, 4)
        w = _const(rng, 3, 4)
        return lambda x: _weighted_sum(te.add(x, y), w), _randt(rng, 3, 4), None

    def c_sub_left(rng):
        y = _const(rng, 3, 4)
        w = _const(rng, 3, 4)
        return lambda x: _weighted_sum(te.sub(x, y), w), _randt(rng, 3, 4), None

    def c_sub_right(rng):
        y = _const(rng, 3, 4)
        w = _const(rng, 3, 4)
        return lambda x: _weighted_sum(te.sub(y, x), w), _randt(rng, 3, 4), None

    def c_mul(rng):
        y = _const(rng, 3, 4)
        w = _const(rng, 3, 4)
        return lambda x: _weighted_sum(te.mul(x, y), w), _randt(rng, 3, 4), None

    def c_scale_tensor(rng):
        w = _const(rng, 3, 4)
        return lambda x: _weighted_sum(te.scale(x, 1.7), w), _randt(rng, 3, 4), None

    def c_scale_scalar(rng):
        y = _const(rng, 3, 4)
        w = _const(rng, 3, 4)
        return lambda s: _weighted_sum(te.scale(y, s), w), Tensor(
            np.asarray(rng.standard_normal()), requires_grad=True), None

    def c_sigmoid(rng):
        w = _const(rng, 5, 3)
        return lambda x: _weighted_sum(te.sigmoid(x), w), _randt(rng, 5, 3), None

    def c_tanh(rng):
        w = _const(rng, 5, 3)
        return lambda x: _weighted_sum(te.tanh(x), w), _randt(rng, 5, 3), None

    def c_relu(rng):
        # keep inputs off the kink so central differences are valid
        data = rng.standard_normal((5, 3))
        data += np.sign(data) * 0.5
        w = _const(rng, 5, 3)
        return lambda x: _weighted_sum(te.relu(x), w), Tensor(data, requires_grad=True), None

    def c_exp(rng):
        w = _const(rng, 4, 4)
        return lambda x: _weighted_sum(te.exp(x), w), _randt(rng, 4, 4), None

    def c_log(rng):
        data = rng.uniform(0.5, 2.0, (4, 4))
        w = _const(rng, 4, 4)
        return lambda x: _weighted_sum(te.log(x), w), Tensor(data, requires_grad=True), None

    def c_clamp(rng):
        # inputs kept clear of the clamp bounds (subgradient there)
        data = rng.standard_normal((4, 4)) * 2.0
        data[np.abs(np.abs(data) - 1.5) < 0.05] = 0.0
        w = _const(rng, 4, 4)
        return lambda x: _weighted_sum(te.clamp(x, -1.5, 1.5), w), Tensor(
            data, requires_grad=True), None

    def c_matmul_left(rng):
        y = _const(rng, 4, 5)
        w = _const(rng, 3, 5)
        return lambda x: _weighted_sum(te.matmul(x, y), w), _randt(rng, 3, 4), None

    def c_matmul_right(rng):
        a = _const(rng, 3, 4)
        w = _const(rng, 3, 5)
        return lambda x: _weighted_sum(te.matmul(a, x), w), _randt(rng, 4, 5), None

    def c_conv_input(rng):
        k = _const(rng, 2, 3, 3, 3)
        b = _const(rng, 2)
        w = _const(rng, 2, 6, 6)
        return lambda x: _weighted_sum(te.conv2d(x, k, b, padding=1), w), _randt(
            rng, 3, 6, 6), None

    def c_conv_kernel(rng):
        x = _const(rng, 3, 6, 6)
        w = _const(rng, 2, 6, 6)
        return lambda k: _weighted_sum(te.conv2d(x, k, None, padding=1), w), _randt(
            rng, 2, 3, 3, 3), None

    def c_conv_bias(rng):
        x = _const(rng, 3, 6, 6)
        k = _const(rng, 2, 3, 3, 3)
        w = _const(rng, 2, 6, 6)
        return lambda b: _weighted_sum(te.conv2d(x, k, b, padding=1), w), _randt(rng, 2), None

    def c_conv_strided(rng):
        k = _const(rng, 2, 3, 3, 3)
        w = _const(rng, 2, 4, 4)
        return lambda x: _weighted_sum(te.conv2d(x, k, None, padding=1, stride=2), w), _randt(
            rng, 3, 7, 7), None

    def c_softmax(rng):
        w = _const(rng, 6)
        return lambda x: _weighted_sum(te.softmax(x), w), _randt(rng, 6), None

    def c_concat(rng):
        y = _const(rng, 2, 4)
        w = _const(rng, 5, 4)
        return lambda x: _weighted_sum(te.concat([x, y], axis=0), w), _randt(rng, 3, 4), None

    def c_narrow(rng):
        w = _const(rng, 2, 4)
        return lambda x: _weighted_sum(te.narrow(x, 0, 1, 2), w), _randt(rng, 5, 4), None

    def c_reshape(rng):
        w = _const(rng, 12)
        return lambda x: _weighted_sum(te.reshape(x, (12,)), w), _randt(rng, 3, 4), None

    def c_transpose(rng):
        w = _const(rng, 4, 3)
        return lambda x: _weighted_sum(te.transpose2d(x), w), _randt(rng, 3, 4), None

    def c_upsample(rng):
        w = _const(rng, 2, 5, 7)
        return lambda x: _weighted_sum(te.upsample_bilinear(x, 5, 7), w), _randt(
            rng, 2, 3, 3), None

    def c_tile_spatial(rng):
        w = _const(rng, 4, 3, 5)
        return lambda x: _weighted_sum(te.tile_spatial(x, 3, 5), w), _randt(rng, 4), None

    def c_tile_channels(rng):
        w = _const(rng, 5, 3, 4)
        return lambda x: _weighted_sum(te.tile_channels(x, 5), w), _randt(rng, 1, 3, 4), None

    def c_expand_cols(rng):
        w = _const(rng, 4, 6)
        return lambda x: _weighted_sum(te.expand_cols(x, 6), w), _randt(rng, 4), None

    def c_embedding(rng):
        ids = [2, 0, 2, 1]  # repeated row: gradients must accumulate
        w = _const(rng, 4, 5)
        return lambda t: _weighted_sum(te.embedding_rows(t, ids), w), _randt(rng, 3, 5), None

    def c_sum(rng):
        return lambda x: te.tensor_sum(x), _randt(rng, 3, 4), None

    def c_mean(rng):
        return lambda x: te.tensor_mean(x), _randt(rng, 3, 4), None

    def c_lstm_step(rng):
        p = LstmParams(w_input=_const(rng, 8, 3), w_hidden=_const(rng, 8, 2),
                       bias=_const(rng, 8))
        state = RecurrentState(hidden=_const(rng, 2), cell=_const(rng, 2))
        w = _const(rng, 2)
        return lambda x: _weighted_sum(lstm_step(x, state, p).hidden, w), _randt(rng, 3), None

    def c_lstm_weights(rng):
        x = _const(rng, 3)
        state = RecurrentState(hidden=_const(rng, 2), cell=_const(rng, 2))
        wh = _const(rng, 8, 2)
        b = _const(rng, 8)
        w = _const(rng, 2)

        def f(wi):
            p = LstmParams(w_input=wi, w_hidden=wh, bias=b)
            return _weighted_sum(lstm_step(x, state, p).cell, w)
        return f, _randt(rng, 8, 3), None

    def c_convlstm_step(rng):
        p = ConvLstmParams(kernel=Tensor(rng.standard_normal((8, 5, 3, 3)) * 0.4),
                           bias=_const(rng, 8))
        state = zero_state((2, 4, 4))
        w = _const(rng, 2, 4, 4)
        return lambda x: _weighted_sum(convlstm_step(x, state, p).hidden, w), _randt(
            rng, 3, 4, 4), None

    def c_modulated_step(rng):
        p = ConvLstmParams(kernel=Tensor(rng.standard_normal((8, 3, 3, 3)) * 0.4),
                           bias=_const(rng, 8))
        state = RecurrentState(hidden=Tensor(rng.standard_normal((2, 4, 4)) * 0.3),
                               cell=_const(rng, 2, 4, 4))
        a = Tensor(np.asarray(0.3))
        w = _const(rng, 2, 4, 4)
        return lambda x: _weighted_sum(
            modulated_convlstm_step(x, a, state, p).hidden, w), _randt(rng, 1, 4, 4), None

    def c_bilstm(rng):
        fwd = LstmParams(_const(rng, 8, 3), _const(rng, 8, 2), _const(rng, 8))
        bwd = LstmParams(_const(rng, 8, 3), _const(rng, 8, 2), _const(rng, 8))
        w = _const(rng, 4, 4)
        return lambda x: _weighted_sum(bilstm_run(x, fwd, bwd), w), _randt(rng, 4, 3), None

    def c_word_attention(rng):
        head = AttentionHead(w_proj=_const(rng, 3, 4), w_score=_const(rng, 3))
        w = _const(rng, 5)
        return lambda h: _weighted_sum(word_attention(h, head), w), _randt(rng, 5, 4), None

    def c_spatial_attention(rng):
        p = SpatialAttentionParams(kernel=Tensor(rng.standard_normal((1, 3, 7, 7)) * 0.2),
                                   bias=_const(rng, 1))
        w = _const(rng, 3, 8, 8)
        return lambda m: _weighted_sum(spatial_attention(m, p), w), _randt(rng, 3, 8, 8), None

    def c_bce(rng):
        target = Tensor((rng.random((1, 6, 6)) > 0.5).astype(np.float64))
        return lambda z: bce_loss(te.sigmoid(z), target), _randt(rng, 1, 6, 6), None

    return [
        ("add", c_add), ("sub (left)", c_sub_left), ("sub (right)", c_sub_right),
        ("mul", c_mul), ("scale by constant", c_scale_tensor),
        ("scale factor", c_scale_scalar), ("sigmoid", c_sigmoid), ("tanh", c_tanh),
        ("relu", c_relu), ("exp", c_exp), ("log", c_log), ("clamp", c_clamp),
        ("matmul (left)", c_matmul_left), ("matmul (right)", c_matmul_right),
        ("conv2d input", c_conv_input), ("conv2d kernel", c_conv_kernel),
        ("conv2d bias", c_conv_bias), ("conv2d stride 2", c_conv_strided),
        ("softmax", c_softmax), ("concat", c_concat), ("narrow", c_narrow),
        ("reshape", c_reshape), ("transpose2d", c_transpose),
        ("upsample_bilinear", c_upsample), ("tile_spatial", c_tile_spatial),
        ("tile_channels", c_tile_channels), ("expand_cols", c_expand_cols),
        ("embedding_rows", c_embedding), ("tensor_sum", c_sum),
        ("tensor_mean", c_mean), ("lstm_step input", c_lstm_step),
        ("lstm_step weights", c_lstm_weights), ("convlstm_step", c_convlstm_step),
        ("modulated cell step", c_modulated_step), ("bilstm_run", c_bilstm),
        ("word_attention", c_word_attention),
        ("spatial_attention", c_spatial_attention), ("bce_loss", c_bce),
    ]


def _toy_pipeline() -> Tuple[Callable[[], Tensor], Dict[str, Tensor]]:
    """Composed model at toy dims with healthy gradient magnitudes.

    Language parameters at unit scale and conv kernels at twice the
    fan-in scale keep all top-magnitude gradient elements far above the
    finite-difference noise floor.
    """
    C_v, Hf, S = 4, 8, 2
    hid, C_a, C_e, C_s, C_d = 2, 3, 4, 4, 3
    img = 8
    rng = np.random.default_rng(11)

    def randt(*shape, s=1.0):
        return Tensor(s * rng.standard_normal(shape), requires_grad=True)

    def kernel_t(*shape):
        fan = int(np.prod(shape[1:]))
        return Tensor(2.0 / np.sqrt(fan) * rng.standard_normal(shape),
                      requires_grad=True)

    lang = LanguageEncoder(
        table=randt(6, C_e),
        fwd=LstmParams(randt(4 * hid, C_e), randt(4 * hid, hid), randt(4 * hid)),
        bwd=LstmParams(randt(4 * hid, C_e), randt(4 * hid, hid), randt(4 * hid)),
        head=AttentionHead(randt(C_a, 2 * hid), randt(C_a)))
    enc = [ConvLstmParams(kernel_t(4 * C_s, C_v + 8 + 2 * hid + C_s, 3, 3),
                          randt(4 * C_s, s=0.5)) for _ in range(S)]
    gates = [SpatialAttentionParams(kernel_t(1, C_s, 7, 7), randt(1, s=0.5))
             for _ in range(S)]
    dec = ConvLstmParams(kernel_t(4 * C_d, C_s + C_d, 3, 3), randt(4 * C_d, s=0.5))
    head = randt(1, C_d, 1, 1)
    levels = [Tensor(rng.standard_normal((C_v, Hf, Hf))) for _ in range(S)]
    target = Tensor((rng.random((1, img, img)) > 0.6).astype(np.float64))
    tokens = TokenSequence([1, 3, 2], max_len=6)

    def pipeline() -> Tensor:
        words = lang.encode_expression(tokens)
        sp = spatial_coords(Hf, Hf)
        encoded = [encode(levels[s], words, enc[s], spatial=sp).hidden
                   for s in range(S)]
        gated = [spatial_attention(m, gates[s]) for s, m in enumerate(encoded)]
        hidden = decode(gated, dec)
        out = predict_mask(hidden, head, img, img)
        return bce_loss(out.prob, target)

    params = {"embed": lang.table,
              "fwd.w_input": lang.fwd.w_input, "fwd.w_hidden": lang.fwd.w_hidden,
              "fwd.bias": lang.fwd.bias,
              "bwd.w_input": lang.bwd.w_input, "bwd.w_hidden": lang.bwd.w_hidden,
              "bwd.bias": lang.bwd.bias,
              "attn.w_proj": lang.head.w_proj, "attn.w_score": lang.head.w_score}
    for s in range(S):
        params[f"encoder{s}.kernel"] = enc[s].kernel
        params[f"encoder{s}.bias"] = enc[s].bias
        params[f"gate{s}.kernel"] = gates[s].kernel
        params[f"gate{s}.bias"] = gates[s].bias
    params["decoder.kernel"] = dec.kernel
    params["decoder.bias"] = dec.bias
    params["head.kernel"] = head
    return pipeline, params


def _install(p: Tensor, values: np.ndarray) -> None:
    p.data.flags.writeable = True
    p.data[...] = values
    p.data.flags.writeable = False


def grad_suite() -> List[CheckResult]:
    results = []
    for name, builder in _grad_cases():
        worst = 0.0
        try:
            for seed in range(10):
                f, x, probes = builder(np.random.default_rng(1000 + seed))
                worst = max(worst, grad_check(f, x, sample=probes))
            ok = worst <= GRAD_TOL
            detail = f"max rel err {worst:.2e} over 10 seeds"
        except Exception as e:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(e).__name__}: {e}"
        results.append(CheckResult(f"grad: {name}", ok, detail))

    try:
        pipeline, params = _toy_pipeline()
        worst = 0.0
        worst_name = ""
        for name, p in params.items():
            snapshot = p.data.copy()

            def f(t, _p=p):
                _install(_p, t.data)
                return pipeline()

            err = grad_check(f, p, sample=8)
            _install(p, snapshot)
            if err > worst:
                worst, worst_name = err, name
        ok = worst <= GRAD_TOL
        detail = f"max rel err {worst:.2e} (at {worst_name}), 8 probes per parameter"
    except Exception as e:
        ok, detail = False, f"raised {type(e).__name__}: {e}"
    results.append(CheckResult("grad: composed pipeline (toy dims)", ok, detail))
    return results


# ---------------------------------------------------------------------------
# invariants suite


def _check(fn: Callable[[], str]) -> CheckResult:
    name = fn.__doc__.strip()
    try:
        detail = fn() or ""
        return CheckResult(name, True, detail)
    except AssertionError as e:
        return CheckResult(name, False, str(e) or "assertion failed")
    except Exception as e:
        return CheckResult(name, False, f"raised {type(e).__name__}: {e}")


def _inv_softmax() -> str:
    """softmax normalizes and ignores constant shifts"""
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = Tensor(rng.standard_normal(int(rng.integers(1, 9))))
        s = te.softmax(v).numpy()
        assert abs(s.sum() - 1.0) <= 1e-6, f"sum {s.sum()}"
        assert (s > 0).all(), "non-positive weight"
        shifted = te.softmax(te.add(v, te.full(v.shape, 3.7))).numpy()
        assert np.max(np.abs(s - shifted)) <= 1e-12, "shift changed softmax"
    return "50 random vectors"


def _inv_attention() -> str:
    """word attention sums to one and is positive; one word gets weight one"""
    rng = np.random.default_rng(1)
    head = init_attention_head(rng, feat_dim=6, attn_dim=4)
    for _ in range(100):
        L = int(rng.integers(2, 13))
        h = Tensor(rng.standard_normal((L, 6)))
        a = word_attention(h, head).numpy()
        assert abs(a.sum() - 1.0) <= 1e-6, f"sum {a.sum()}"
        assert (a > 0).all(), "non-positive attention"
    one = word_attention(Tensor(rng.standard_normal((1, 6))), head).numpy()
    assert one.shape == (1,) and one[0] == 1.0, f"L=1 gave {one}"
    return "100 expressions plus the single-word case"


def _inv_modulated_cell() -> str:
    """modulated cell: a=1 keeps only input, a=0 keeps only memory, a=0.5 halves"""
    rng = np.random.default_rng(2)
    p = ConvLstmParams(kernel=Tensor(rng.standard_normal((8, 5, 3, 3)) * 0.4),
                       bias=Tensor(rng.standard_normal(8)))
    x = Tensor(rng.standard_normal((3, 4, 4)))
    state = RecurrentState(hidden=Tensor(rng.standard_normal((2, 4, 4)) * 0.5),
                           cell=Tensor(rng.standard_normal((2, 4, 4))))
    i, f, o, g = (t.numpy() for t in convlstm_gates(x, state, p))
    one = modulated_convlstm_step(x, Tensor(np.asarray(1.0)), state, p)
    assert np.array_equal(one.cell.numpy(), i * g), "a=1 is not exactly i*g"
    zero = modulated_convlstm_step(x, Tensor(np.asarray(0.0)), state, p)
    assert np.array_equal(zero.cell.numpy(), f * state.cell.numpy()), \
        "a=0 is not exactly f*C_prev"
    half = modulated_convlstm_step(x, Tensor(np.asarray(0.5)), state, p)
    standard = convlstm_step(x, state, p)
    diff = np.max(np.abs(half.cell.numpy() - 0.5 * standard.cell.numpy()))
    assert diff <= 1e-12, f"a=0.5 vs half standard: {diff}"
    for a in (0.2, 0.7):
        mixed = modulated_convlstm_step(x, Tensor(np.asarray(a)), state, p)
        lin = a * one.cell.numpy() + (1 - a) * zero.cell.numpy()
        assert np.max(np.abs(mixed.cell.numpy() - lin)) <= 1e-15, "not linear in a"
    try:
        modulated_convlstm_step(x, Tensor(np.asarray(1.5)), state, p)
        assert False, "attention 1.5 accepted"
    except ValueError:
        pass
    return "degenerate cases bitwise, linearity, range check"


def _inv_hidden_bound() -> str:
    """encoder hidden states stay strictly inside (-1, 1)"""
    rng = np.random.default_rng(3)
    vocab = Vocabulary(["red", "circle", "left"])
    lang = init_language_encoder(rng, len(vocab), embed_dim=4, lstm_hidden=2,
                                 attn_dim=3)
    p = init_convlstm_params(rng, input_channels=4 + 8 + 4, hidden_channels=3,
                             kernel_size=3)
    visual = Tensor(rng.standard_normal((4, 5, 5)))
    words = lang.encode_expression(TokenSequence([1, 2, 3], max_len=6))
    out = encode(visual, words, p, keep_steps=True)
    for h in out.step_hiddens:
        assert np.max(np.abs(h.numpy())) < 1.0, "hidden state out of (-1, 1)"
    return "3-word encode, all steps bounded"


def _inv_spatial_attention() -> str:
    """spatial attention never increases magnitude"""
    rng = np.random.default_rng(4)
    p = SpatialAttentionParams(kernel=Tensor(rng.standard_normal((1, 3, 7, 7))),
                               bias=Tensor(rng.standard_normal(1)))
    m = Tensor(rng.standard_normal((3, 9, 9)))
    out = spatial_attention(m, p).numpy()
    assert (np.abs(out) <= np.abs(m.numpy())).all(), "gate amplified a value"
    return "random map, |out| <= |in| elementwise"


def _inv_bce() -> str:
    """BCE is non-negative and vanishes only at a perfect prediction"""
    rng = np.random.default_rng(5)
    target = Tensor((rng.random((1, 5, 5)) > 0.5).astype(np.float64))
    perfect = bce_loss(Tensor(target.numpy().copy()), target).item()
    assert 0.0 <= perfect <= 1.01e-7, f"perfect-prediction loss {perfect}"
    for _ in range(20):
        prob = Tensor(rng.uniform(0.05, 0.95, (1, 5, 5)))
        val = bce_loss(prob, target).item()
        assert val > 0.0, "zero loss on imperfect prediction"
    half = bce_loss(Tensor(np.full((1, 4, 4), 0.5)),
                    Tensor((rng.random((1, 4, 4)) > 0.5).astype(np.float64))).item()
    assert abs(half - math.log(2.0)) <= 1e-12, f"uniform-0.5 loss {half}"
    return "non-negativity, ln 2 case, perfect case"


def _inv_decode_order() -> str:
    """decoding is order-sensitive for distinct levels"""
    rng = np.random.default_rng(6)
    p = ConvLstmParams(kernel=Tensor(rng.standard_normal((8, 5, 3, 3)) * 0.4),
                       bias=Tensor(rng.standard_normal(8)))
    levels = [Tensor(rng.standard_normal((3, 4, 4))) for _ in range(3)]
    a = decode(levels, p).numpy()
    b = decode(levels[::-1], p).numpy()
    assert not np.array_equal(a, b), "permuted levels gave identical output"
    return "3 random levels, reversed order differs"


def _inv_schedule() -> str:
    """poly schedule decays strictly from base_lr to zero"""
    cfg = TrainConfig(max_iters=100)
    values = [poly_lr(i, cfg) for i in range(101)]
    assert values[0] == cfg.base_lr, f"lr(0) = {values[0]}"
    assert values[-1] == 0.0, f"lr(end) = {values[-1]}"
    assert all(a > b for a, b in zip(values, values[1:])), "not strictly decreasing"
    return "101 evaluations"


def _inv_adam_identity() -> str:
    """Adam with zero rate (or zero gradient and decay) changes nothing"""
    rng = np.random.default_rng(7)
    params = {"w": Tensor(rng.standard_normal((3, 3)), requires_grad=True)}
    grads = {"w": rng.standard_normal((3, 3))}
    state = init_adam(params)
    new = adam_step(params, grads, state, lr=0.0, weight_decay=0.5)
    assert np.array_equal(new["w"], params["w"].numpy()), "lr=0 moved parameters"
    state = init_adam(params)
    new = adam_step(params, {"w": np.zeros((3, 3))}, state, lr=0.1, weight_decay=0.0)
    assert np.array_equal(new["w"], params["w"].numpy()), "zero gradient moved parameters"
    return "both identities hold"


def _inv_spatial_coords() -> str:
    """coordinate map: declared channel layout, range, reproducibility"""
    m = spatial_coords(1, 1).numpy()
    assert np.allclose(m[:6, 0, 0], [-1, 0, 1, -1, 0, 1]), f"1x1 triples {m[:6,0,0]}"
    two = spatial_coords(2, 2).numpy()
    assert np.allclose(two[1, 0, :], [-0.5, 0.5]), f"W=2 centers {two[1,0,:]}"
    big = spatial_coords(7, 5).numpy()
    assert big.min() >= -1.0 and big.max() <= 1.0, "values escape [-1, 1]"
    assert np.array_equal(big, spatial_coords(7, 5).numpy()), "not reproducible"
    assert np.allclose(big[6], 1 / 7) and np.allclose(big[7], 1 / 5), "size channels"
    return "1x1, 2x2, 7x5 maps"


def _inv_tape() -> str:
    """a gradient tape can only be swept once"""
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    loss = te.tensor_sum(te.mul(x, x))
    backward(loss)
    try:
        backward(loss)
        assert False, "second sweep did not raise"
    except TapeError:
        pass
    return "second backward raises"


def _inv_metrics() -> str:
    """IoU conventions and strict precision thresholds"""
    rng = np.random.default_rng(8)
    for _ in range(20):
        a = rng.random((6, 6)) > 0.5
        b = rng.random((6, 6)) > 0.5
        assert iou(a, b) == iou(b, a), "asymmetric IoU"
        assert 0.0 <= iou(a, b) <= 1.0, "IoU out of range"
    a = rng.random((6, 6)) > 0.3
    assert iou(a, a) == 1.0, "self IoU below 1"
    empty = np.zeros((4, 4), dtype=bool)
    assert iou(empty, empty) == 1.0, "both-empty convention"
    assert iou(a[:4, :4] | True, empty) == 0.0, "one-empty convention"
    assert prec_at([0.5, 0.7], 0.5) == 0.5, "threshold tie must not count"
    report = build_report([0.95, 0.55, 0.3], [2, 6, 9])
    ps = [report.precision[t] for t in sorted(report.precision)]
    assert all(x >= y for x, y in zip(ps, ps[1:])), "Prec@X increased with X"
    return "symmetry, conventions, strictness, monotonicity"


def _inv_generator() -> str:
    """generated expressions resolve uniquely to the masked shape"""
    cfg = SceneConfig()
    for i in range(100):
        sample = gen_sample(np.random.default_rng([99, i]), cfg)
        shapes = [Shape.from_meta(d) for d in sample.meta["shapes"]]
        desc = parse_expression(sample.tokens)
        hits = resolve(desc, shapes, sample.meta["canvas"])
        assert hits == [sample.meta["target"]], \
            f"{sample.expression!r} resolved to {hits}"
        assert sample.mask.sum() > 0, "empty mask"
    return "100 scenes re-resolved"


def invariants_suite() -> List[CheckResult]:
    return [_check(fn) for fn in (
        _inv_softmax, _inv_attention, _inv_modulated_cell, _inv_hidden_bound,
        _inv_spatial_attention, _inv_bce, _inv_decode_order, _inv_schedule,
        _inv_adam_identity, _inv_spatial_coords, _inv_tape, _inv_metrics,
        _inv_generator)]


# ---------------------------------------------------------------------------
# oracle suite


def _conv_loop_oracle(x: np.ndarray, k: np.ndarray, bias: Optional[np.ndarray],
                      padding: int, stride: int) -> np.ndarray:
    """Six nested loops, accumulation in (channel, row, col) order."""
    o_ch, c_ch, ks, _ = k.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (xp.shape[1] - ks) // stride + 1
    wo = (xp.shape[2] - ks) // stride + 1
    out = np.zeros((o_ch, ho, wo), dtype=x.dtype)
    for o in range(o_ch):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for c in range(c_ch):
                    for u in range(ks):
                        for v in range(ks):
                            acc += xp[c, i * stride + u, j * stride + v] * k[o, c, u, v]
                out[o, i, j] = acc
    if bias is not None:
        out += bias[:, None, None]
    return out


def _bilinear_oracle(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-pixel bilinear interpolation, half-pixel centers, clamped edges."""
    c, h, w = x.shape
    out = np.zeros((c, out_h, out_w), dtype=x.dtype)
    for i in range(out_h):
        src_i = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        i0 = int(np.floor(src_i))
        i1 = min(i0 + 1, h - 1)
        fi = src_i - i0
        for j in range(out_w):
            src_j = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            j0 = int(np.floor(src_j))
            j1 = min(j0 + 1, w - 1)
            fj = src_j - j0
            for ch in range(c):
                top = x[ch, i0, j0] * (1 - fj) + x[ch, i0, j1] * fj
                bot = x[ch, i1, j0] * (1 - fj) + x[ch, i1, j1] * fj
                out[ch, i, j] = top * (1 - fi) + bot * fi
    return out


def _orc_conv() -> str:
    """conv2d equals the nested-loop reference bit for bit (float64)"""
    rng = np.random.default_rng(20)
    for c_in, c_out, size, k, pad, stride in (
            (1, 1, 4, 1, 0, 1), (2, 3, 5, 3, 1, 1), (4, 2, 8, 3, 0, 1),
            (3, 2, 8, 3, 1, 2), (4, 4, 8, 5, 2, 1)):
        x = rng.standard_normal((c_in, size, size))
        kern = rng.standard_normal((c_out, c_in, k, k))
        b = rng.standard_normal(c_out)
        got = te.conv2d(Tensor(x), Tensor(kern), Tensor(b),
                        padding=pad, stride=stride).numpy()
        want = _conv_loop_oracle(x, kern, b, pad, stride)
        assert np.array_equal(got, want), \
            f"mismatch at c_in={c_in} c_out={c_out} k={k} pad={pad} stride={stride}"
    return "5 shape/padding/stride combinations, exact equality"


def _orc_convlstm_vs_lstm() -> str:
    """1x1 ConvLSTM on a 1x1 grid is an LSTM with flattened weights"""
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(300 + seed)
        in_ch, hid = 3, 4
        kernel = rng.standard_normal((4 * hid, in_ch + hid, 1, 1))
        bias = rng.standard_normal(4 * hid)
        x = rng.standard_normal(in_ch)
        h0 = rng.standard_normal(hid)
        c0 = rng.standard_normal(hid)
        conv_p = ConvLstmParams(kernel=Tensor(kernel), bias=Tensor(bias))
        conv_state = RecurrentState(hidden=Tensor(h0.reshape(hid, 1, 1)),
                                    cell=Tensor(c0.reshape(hid, 1, 1)))
        conv_out = convlstm_step(Tensor(x.reshape(in_ch, 1, 1)), conv_state, conv_p)
        flat = kernel[:, :, 0, 0]
        lstm_p = LstmParams(w_input=Tensor(flat[:, :in_ch].copy()),
                            w_hidden=Tensor(flat[:, in_ch:].copy()),
                            bias=Tensor(bias))
        lstm_state = RecurrentState(hidden=Tensor(h0), cell=Tensor(c0))
        lstm_out = lstm_step(Tensor(x), lstm_state, lstm_p)
        worst = max(worst,
                    np.max(np.abs(conv_out.hidden.numpy().ravel() - lstm_out.hidden.numpy())),
                    np.max(np.abs(conv_out.cell.numpy().ravel() - lstm_out.cell.numpy())))
    assert worst <= 1e-12, f"max deviation {worst}"
    return f"20 seeds, max deviation {worst:.1e}"


def _orc_decode_composition() -> str:
    """decoding repeated identical levels equals repeated single steps"""
    rng = np.random.default_rng(21)
    p = ConvLstmParams(kernel=Tensor(rng.standard_normal((8, 5, 3, 3)) * 0.4),
                       bias=Tensor(rng.standard_normal(8)))
    level = Tensor(rng.standard_normal((3, 4, 4)))
    got = decode([level, level, level], p).numpy()
    state = zero_state((2, 4, 4))
    for _ in range(3):
        state = convlstm_step(level, state, p)
    assert np.array_equal(got, state.hidden.numpy()), "composition differs"
    return "S=3 identical levels"


def _orc_upsample() -> str:
    """bilinear upsampling matches the per-pixel interpolation formula"""
    rng = np.random.default_rng(22)
    for shape, out_h, out_w in (((1, 2, 2), 4, 4), ((3, 3, 5), 7, 9),
                                ((2, 4, 4), 3, 3), ((1, 1, 4), 4, 8)):
        x = rng.standard_normal(shape)
        got = te.upsample_bilinear(Tensor(x), out_h, out_w).numpy()
        want = _bilinear_oracle(x, out_h, out_w)
        diff = np.max(np.abs(got - want))
        assert diff <= 1e-12, f"{shape} -> {out_h}x{out_w}: diff {diff}"
    hand = te.upsample_bilinear(Tensor(np.array([[[0.0, 1.0], [0.0, 1.0]]])), 2, 4)
    assert np.allclose(hand.numpy()[0, 0], [0.0, 0.25, 0.75, 1.0]), "hand case"
    return "4 shapes plus the quarter-step hand case"


def _orc_matmul() -> str:
    """matmul agrees with an explicit triple loop"""
    rng = np.random.default_rng(23)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 5))
    want = np.zeros((3, 5))
    for i in range(3):
        for j in range(5):
            for kk in range(4):
                want[i, j] += a[i, kk] * b[kk, j]
    got = te.matmul(Tensor(a), Tensor(b)).numpy()
    assert np.max(np.abs(got - want)) <= 1e-12, "matmul mismatch"
    return "3x4 @ 4x5"


def _orc_bce_value() -> str:
    """BCE reproduces the two-pixel hand computation"""
    prob = Tensor(np.array([[0.8, 0.3]]))
    target = Tensor(np.array([[1.0, 0.0]]))
    got = bce_loss(prob, target).item()
    want = -(math.log(0.8) + math.log(0.7)) / 2.0
    assert abs(got - want) <= 1e-12, f"{got} vs {want}"
    return f"loss {got:.6f}"


def _orc_iou_cases() -> str:
    """IoU and precision match counting references on random masks"""
    rng = np.random.default_rng(24)
    ious = []
    for _ in range(50):
        a = rng.random((8, 8)) > rng.uniform(0.3, 0.9)
        b = rng.random((8, 8)) > rng.uniform(0.3, 0.9)
        inter = int((a & b).sum())
        union = int((a | b).sum())
        want = 1.0 if union == 0 else inter / union
        got = iou(a, b)
        assert got == want, f"iou {got} vs {want}"
        ious.append(got)
    for threshold in (0.5, 0.6, 0.7, 0.8, 0.9):
        count = sum(1 for v in ious if v > threshold)
        assert prec_at(ious, threshold) == count / len(ious), "prec mismatch"
    block = np.zeros((4, 4), dtype=bool)
    block[1:3, 0:2] = True
    shifted = np.zeros((4, 4), dtype=bool)
    shifted[1:3, 1:3] = True
    got = iou(block, shifted)
    assert abs(got - 2.0 / 6.0) <= 1e-12, f"adjacent blocks: {got}"
    return "50 pairs exact, adjacent-blocks case 2/6"


def _orc_poly_values() -> str:
    """poly schedule reproduces hand-evaluated points"""
    cfg = TrainConfig(base_lr=0.00025, power=0.9, max_iters=1000)
    assert poly_lr(0, cfg) == 0.00025
    assert poly_lr(1000, cfg) == 0.0
    mid = poly_lr(500, cfg)
    want = 0.00025 * 0.5 ** 0.9
    assert abs(mid - want) <= 1e-18, f"{mid} vs {want}"
    return f"midpoint {mid:.6e}"


def _orc_adam_recurrence() -> str:
    """two Adam steps match the scalar recurrence run by hand"""
    g = 0.3
    lr = 0.01
    m = v = 0.0
    w = 1.0
    for t in (1, 2):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        m_hat = m / (1 - 0.9 ** t)
        v_hat = v / (1 - 0.999 ** t)
        w -= lr * m_hat / (math.sqrt(v_hat) + 1e-8)
    params = {"w": Tensor(np.array([[1.0]]), requires_grad=True)}
    state = init_adam(params)
    for _ in range(2):
        new = adam_step(params, {"w": np.array([[g]])}, state, lr=lr)
        params["w"] = Tensor(new["w"], requires_grad=True)
    got = params["w"].item()
    assert abs(got - w) <= 1e-15, f"{got} vs {w}"
    return f"value {got:.10f}"


def _orc_lstm_formula() -> str:
    """one LSTM step matches the direct gate formulas"""
    rng = np.random.default_rng(25)
    in_size, hid = 3, 2
    p = LstmParams(w_input=Tensor(rng.standard_normal((4 * hid, in_size))),
                   w_hidden=Tensor(rng.standard_normal((4 * hid, hid))),
                   bias=Tensor(rng.standard_normal(4 * hid)))
    x = rng.standard_normal(in_size)
    h0 = rng.standard_normal(hid)
    c0 = rng.standard_normal(hid)
    out = lstm_step(Tensor(x), RecurrentState(hidden=Tensor(h0), cell=Tensor(c0)), p)
    pre = p.w_input.numpy() @ x + p.w_hidden.numpy() @ h0 + p.bias.numpy()

    def sig(z):
        return 1.0 / (1.0 + np.exp(-z))
    i, f, o = sig(pre[:hid]), sig(pre[hid:2 * hid]), sig(pre[2 * hid:3 * hid])
    g = np.tanh(pre[3 * hid:])
    c1 = i * g + f * c0
    h1 = o * np.tanh(c1)
    assert np.max(np.abs(out.cell.numpy() - c1)) <= 1e-12, "cell mismatch"
    assert np.max(np.abs(out.hidden.numpy() - h1)) <= 1e-12, "hidden mismatch"
    return "gates in (i, f, o, g) order"


def _orc_word_attention_formula() -> str:
    """word attention matches the two-matrix score formula"""
    rng = np.random.default_rng(26)
    head = AttentionHead(w_proj=Tensor(rng.standard_normal((3, 4))),
                         w_score=Tensor(rng.standard_normal(3)))
    h = rng.standard_normal((5, 4))
    got = word_attention(Tensor(h), head).numpy()
    scores = np.tanh(h @ head.w_proj.numpy().T) @ head.w_score.numpy()
    e = np.exp(scores - scores.max())
    want = e / e.sum()
    assert np.max(np.abs(got - want)) <= 1e-12, "attention mismatch"
    return "5 words"


def oracle_suite() -> List[CheckResult]:
    return [_check(fn) for fn in (
        _orc_conv, _orc_convlstm_vs_lstm, _orc_decode_composition, _orc_upsample,
        _orc_matmul, _orc_bce_value, _orc_iou_cases, _orc_poly_values,
        _orc_adam_recurrence, _orc_lstm_formula, _orc_word_attention_formula)]


# ---------------------------------------------------------------------------


def run_suite(name: str) -> List[CheckResult]:
    if name == "grad":
        return grad_suite()
    if name == "invariants":
        return invariants_suite()
    if name == "oracle":
        return oracle_suite()
    raise ValueError(f"unknown suite {name!r}, expected one of {SUITE_NAMES}")
