"""Vocabulary, embedding, and word-attention behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import refseg.tensor as te
from refseg.language import (TokenSequence, UNK_ID, UNK_TOKEN, Vocabulary,
                             embed, init_attention_head,
                             init_language_encoder, reweight, tokenize,
                             word_attention)
from refseg.tensor import Tensor


def test_tokenize_lowercases_and_splits():
    assert tokenize("The RED   circle") == ["the", "red", "circle"]


def test_vocabulary_reserves_unk():
    v = Vocabulary(["b", "a", "b"])
    assert v.decode([UNK_ID]) == [UNK_TOKEN]
    assert len(v) == 3
    assert v.encode(["a", "b", "zzz"]) == [1, 2, UNK_ID]


def test_vocabulary_order_is_canonical():
    a = Vocabulary(["dog", "cat", "ant"])
    b = Vocabulary(["cat", "ant", "dog", "cat"])
    assert a.tokens() == b.tokens()


def test_vocabulary_from_corpus():
    v = Vocabulary.from_corpus(["the red circle", "the BLUE square"])
    assert set(v.tokens()) == {UNK_TOKEN, "the", "red", "circle", "blue", "square"}


def test_token_sequence_length_limits():
    t = TokenSequence([1, 2, 3], max_len=12)
    assert len(t.ids) == 3
    with pytest.raises(ValueError):
        TokenSequence([], max_len=12)
    with pytest.raises(ValueError):
        TokenSequence(list(range(13)), max_len=12)


def test_embed_gathers_rows():
    table = Tensor(np.arange(12.0).reshape(4, 3))
    out = embed(TokenSequence([2, 0, 1], max_len=5), table)
    np.testing.assert_array_equal(out.data, table.data[[2, 0, 1]])


def test_attention_sums_to_one_and_positive():
    rng = np.random.default_rng(0)
    for L in (1, 2, 5, 12):
        head = init_attention_head(rng, 8, 6)
        hidden = Tensor(rng.standard_normal((L, 8)))
        a = word_attention(hidden, head).data
        assert a.shape == (L,)
        assert np.all(a > 0.0)
        assert abs(a.sum() - 1.0) < 1e-12


def test_attention_single_word_is_exactly_one():
    rng = np.random.default_rng(1)
    head = init_attention_head(rng, 4, 3)
    a = word_attention(Tensor(rng.standard_normal((1, 4))), head).data
    assert a.shape == (1,)
    assert a[0] == 1.0


@settings(max_examples=30, deadline=None)
@given(L=st.integers(min_value=1, max_value=12),
       seed=st.integers(min_value=0, max_value=10_000))
def test_attention_normalisation_property(L, seed):
    rng = np.random.default_rng(seed)
    head = init_attention_head(rng, 6, 5)
    a = word_attention(Tensor(rng.standard_normal((L, 6)) * 3.0), head).data
    assert abs(a.sum() - 1.0) < 1e-9
    assert np.all(a > 0.0)


def test_attention_score_formula():
    """softmax over w_score . tanh(h W_proj^T) per word."""
    rng = np.random.default_rng(2)
    head = init_attention_head(rng, 7, 4)
    hidden = rng.standard_normal((5, 7))
    scores = np.tanh(hidden @ head.w_proj.data.T) @ head.w_score.data
    ref = np.exp(scores - scores.max())
    ref /= ref.sum()
    got = word_attention(Tensor(hidden), head).data
    np.testing.assert_allclose(got, ref, rtol=1e-12)


def test_reweight_scales_rows():
    hidden = Tensor(np.ones((3, 4)))
    attn = Tensor(np.array([0.2, 0.3, 0.5]))
    out = reweight(hidden, attn).data
    np.testing.assert_allclose(out[0], 0.2)
    np.testing.assert_allclose(out[2], 0.5)


def test_encode_expression_shapes():
    rng = np.random.default_rng(3)
    enc = init_language_encoder(rng, vocab_size=10, embed_dim=6,
                                lstm_hidden=4, attn_dim=5)
    feats = enc.encode_expression(TokenSequence([1, 4, 2], max_len=12))
    assert feats.hidden.shape == (3, 8)
    assert feats.attention.shape == (3,)
    assert feats.reweighted.shape == (3, 8)
    np.testing.assert_allclose(
        feats.reweighted.data,
        feats.hidden.data * feats.attention.data[:, None], rtol=1e-12)


def test_language_encoder_deterministic_given_seed():
    a = init_language_encoder(np.random.default_rng(7), 9, 4, 3, 2)
    b = init_language_encoder(np.random.default_rng(7), 9, 4, 3, 2)
    np.testing.assert_array_equal(a.table.data, b.table.data)
    np.testing.assert_array_equal(a.head.w_proj.data, b.head.w_proj.data)
