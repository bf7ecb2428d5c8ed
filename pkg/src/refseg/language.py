"""Expression encoding: embedding, biLSTM, word attention, reweighting.

The attention score for word l is w_score . tanh(W_proj h_l) with no bias
terms; softmax over the expression turns scores into weights a_l, and the
attentive word feature is r_l = a_l * h_l.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as te
from .recurrent import LstmParams, bilstm_run, init_lstm_params
from .tensor import ShapeError, Tensor

UNK_TOKEN = "<unk>"
UNK_ID = 0


class Vocabulary:
    """Token <-> id map built from a training corpus; id 0 is <unk>."""

    def __init__(self, tokens: Sequence[str]):
        uniq = sorted(set(tokens) - {UNK_TOKEN})
        self._id_to_token = [UNK_TOKEN] + uniq
        self._token_to_id = {t: i for i, t in enumerate(self._id_to_token)}

    @classmethod
    def from_corpus(cls, expressions: Sequence[str]) -> "Vocabulary":
        tokens = []
        for expr in expressions:
            tokens.extend(tokenize(expr))
        return cls(tokens)

    def __len__(self):
        return len(self._id_to_token)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self._token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self._id_to_token[i] for i in ids]

    def tokens(self) -> list[str]:
        return list(self._id_to_token)


def tokenize(expression: str) -> list[str]:
    return expression.lower().split()


@dataclass
class TokenSequence:
    """Word-id sequence of true length L, 1 <= L <= max_len."""

    ids: list[int]
    max_len: int = 20

    def __post_init__(self):
        if not 1 <= len(self.ids) <= self.max_len:
            raise ShapeError(
                f"token sequence length {len(self.ids)} outside [1, {self.max_len}]")

    def __len__(self):
        return len(self.ids)


@dataclass
class WordFeatures:
    """Per-word hidden vectors h, attention weights a, reweighted features r."""

    hidden: Tensor   # [L, C_r]
    attention: Tensor  # [L]
    reweighted: Tensor  # [L, C_r]


@dataclass
class AttentionHead:
    """Two bias-free linear maps producing one scalar score per word."""

    w_proj: Tensor   # [C_a, C_r]
    w_score: Tensor  # [C_a]


def init_attention_head(rng: np.random.Generator, feat_dim: int, attn_dim: int,
                        dtype=np.float64) -> AttentionHead:
    if attn_dim < 1:
        raise ShapeError("init_attention_head: attention dim must be positive")
    return AttentionHead(
        w_proj=te.uniform(rng, -1.0 / np.sqrt(feat_dim), 1.0 / np.sqrt(feat_dim),
                          (attn_dim, feat_dim), dtype=dtype, requires_grad=True),
        w_score=te.uniform(rng, -1.0 / np.sqrt(attn_dim), 1.0 / np.sqrt(attn_dim),
                           (attn_dim,), dtype=dtype, requires_grad=True),
    )


def embed(tokens: TokenSequence, table: Tensor) -> Tensor:
    """Look up one table row per token id -> [L, C_e]."""
    return te.embedding_rows(table, tokens.ids)


def word_attention(hidden: Tensor, head: AttentionHead) -> Tensor:
    """Softmax-normalized importance weights, one per word."""
    if hidden.data.ndim != 2 or hidden.shape[0] < 1:
        raise ShapeError(f"word_attention: expected [L, C_r], got {list(hidden.shape)}")
    if hidden.shape[1] != head.w_proj.shape[1]:
        raise ShapeError(
            f"word_attention: feature dim {hidden.shape[1]} does not match head "
            f"(expected {head.w_proj.shape[1]})")
    projected = te.tanh(te.matmul(hidden, te.transpose2d(head.w_proj)))  # [L, C_a]
    scores = te.matmul(projected, te.reshape(head.w_score, (head.w_score.shape[0], 1)))
    return te.softmax(te.reshape(scores, (hidden.shape[0],)))


def reweight(hidden: Tensor, attention: Tensor) -> Tensor:
    """Scale row l of the hidden matrix by attention weight a_l."""
    if hidden.data.ndim != 2 or attention.data.ndim != 1:
        raise ShapeError("reweight: expected [L, C_r] hidden and [L] attention")
    if hidden.shape[0] != attention.shape[0]:
        raise ShapeError(
            f"reweight: {hidden.shape[0]} hidden rows vs {attention.shape[0]} weights")
    return te.mul(hidden, te.expand_cols(attention, hidden.shape[1]))


@dataclass
class LanguageEncoder:
    """Embedding + biLSTM + attention head, applied as one pipeline."""

    table: Tensor  # [|V|, C_e]
    fwd: LstmParams
    bwd: LstmParams
    head: AttentionHead

    @property
    def feat_dim(self) -> int:
        return self.fwd.hidden_size + self.bwd.hidden_size

    def encode_expression(self, tokens: TokenSequence) -> WordFeatures:
        embeds = embed(tokens, self.table)
        hidden = bilstm_run(embeds, self.fwd, self.bwd)
        attention = word_attention(hidden, self.head)
        return WordFeatures(hidden=hidden, attention=attention,
                            reweighted=reweight(hidden, attention))


def init_language_encoder(rng: np.random.Generator, vocab_size: int, embed_dim: int,
                          lstm_hidden: int, attn_dim: int,
                          dtype=np.float64) -> LanguageEncoder:
    bound = 1.0 / np.sqrt(embed_dim)
    return LanguageEncoder(
        table=te.uniform(rng, -bound, bound, (vocab_size, embed_dim),
                         dtype=dtype, requires_grad=True),
        fwd=init_lstm_params(rng, embed_dim, lstm_hidden, dtype=dtype),
        bwd=init_lstm_params(rng, embed_dim, lstm_hidden, dtype=dtype),
        head=init_attention_head(rng, 2 * lstm_hidden, attn_dim, dtype=dtype),
    )
