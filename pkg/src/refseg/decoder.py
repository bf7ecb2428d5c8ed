"""Multi-level mask decoding: spatial attention, ConvLSTM refinement, loss.

The decoder walks the encoded feature levels from high-level to low-level
semantics with a plain (unmodulated) ConvLSTM. Each level is first gated
by a sigmoid attention map from a large-kernel convolution; the gate is a
single channel broadcast over all feature channels. The last hidden state
goes through a 1x1 conv head, is bilinearly upsampled to image resolution,
and trains against the ground-truth mask with mean binary cross entropy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as te
from .recurrent import ConvLstmParams, convlstm_step, zero_state
from .tensor import ShapeError, Tensor

PROB_EPS = 1e-7


@dataclass
class SpatialAttentionParams:
    """Single-gate conv: kernel [1, C_s, k, k] (default k=7) plus scalar bias."""

    kernel: Tensor
    bias: Tensor  # [1]

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[2]


def init_spatial_attention(rng: np.random.Generator, channels: int,
                           kernel_size: int = 7, dtype=np.float64) -> SpatialAttentionParams:
    if kernel_size % 2 == 0:
        raise ShapeError("init_spatial_attention: kernel size must be odd")
    bound = 1.0 / np.sqrt(channels * kernel_size * kernel_size)
    # bias +2 starts the gate near pass-through (sigmoid(2) = 0.88); a
    # 0.5 gate at init halves an already weak feature signal
    return SpatialAttentionParams(
        kernel=te.uniform(rng, -bound, bound, (1, channels, kernel_size, kernel_size),
                          dtype=dtype, requires_grad=True),
        bias=te.full((1,), 2.0, dtype=dtype, requires_grad=True),
    )


@dataclass
class SegmentationOutput:
    """Per-pixel probabilities with the derived 0.5-threshold binary mask."""

    prob: Tensor            # [1, H_img, W_img], values in (0, 1)
    logits: Tensor          # [1, H_img, W_img], kept for the loss
    mask: np.ndarray        # [H_img, W_img] bool, prob >= 0.5


def spatial_attention(m: Tensor, p: SpatialAttentionParams) -> Tensor:
    """Gate a feature map by sigmoid(conv(m)), broadcast over channels."""
    if m.data.ndim != 3:
        raise ShapeError(f"spatial_attention: expected [C,H,W], got {list(m.shape)}")
    if m.shape[0] != p.kernel.shape[1]:
        raise ShapeError(
            f"spatial_attention: {m.shape[0]} channels vs kernel expecting "
            f"{p.kernel.shape[1]}")
    gate = te.sigmoid(te.conv2d(m, p.kernel, p.bias, padding=(p.kernel_size - 1) // 2))
    return te.mul(te.tile_channels(gate, m.shape[0]), m)


def attention_gate(m: Tensor, p: SpatialAttentionParams) -> Tensor:
    """The raw [1,H,W] gate map, exposed for visualization dumps."""
    return te.sigmoid(te.conv2d(m, p.kernel, p.bias, padding=(p.kernel_size - 1) // 2))


def decode(levels: Sequence[Tensor], p: ConvLstmParams,
           keep_steps: bool = False):
    """Fold the level sequence (high-level first) through the ConvLSTM."""
    levels = list(levels)
    if not levels:
        raise ShapeError("decode: need at least one feature level")
    spatial = levels[0].shape[1:]
    for lv in levels[1:]:
        if lv.shape != levels[0].shape:
            raise ShapeError(
                f"decode: level shape {list(lv.shape)} differs from {list(levels[0].shape)}")
    state = zero_state((p.hidden_channels,) + spatial, dtype=levels[0].dtype)
    steps = [] if keep_steps else None
    for lv in levels:
        state = convlstm_step(lv, state, p)
        if keep_steps:
            steps.append(state.hidden)
    if keep_steps:
        return state.hidden, steps
    return state.hidden


def predict_mask(hidden: Tensor, head_kernel: Tensor, img_h: int, img_w: int) -> SegmentationOutput:
    """1x1 conv -> logits -> bilinear upsample to image size -> sigmoid."""
    if img_h < 1 or img_w < 1:
        raise ShapeError(f"predict_mask: target size {img_h}x{img_w} must be positive")
    if head_kernel.shape[0] != 1 or head_kernel.shape[2:] != (1, 1):
        raise ShapeError(
            f"predict_mask: head kernel must be [1,C,1,1], got {list(head_kernel.shape)}")
    logits = te.conv2d(hidden, head_kernel, padding=0)
    logits = te.upsample_bilinear(logits, img_h, img_w)
    prob = te.sigmoid(logits)
    return SegmentationOutput(prob=prob, logits=logits, mask=prob.numpy()[0] >= 0.5)


def bce_loss(prob: Tensor, target: Tensor) -> Tensor:
    """Mean over all pixels of -[t log p + (1-t) log(1-p)], p clamped away from {0,1}."""
    if prob.shape != target.shape:
        raise ShapeError(
            f"bce_loss: prediction {list(prob.shape)} and target {list(target.shape)} differ")
    p = te.clamp(prob, PROB_EPS, 1.0 - PROB_EPS)
    one = te.ones(prob.shape, dtype=prob.dtype)
    target_c = Tensor(target.data.astype(prob.dtype))  # constant: no grad to labels
    pos = te.mul(target_c, te.log(p))
    neg = te.mul(te.sub(one, target_c), te.log(te.sub(one, p)))
    return te.scale(te.tensor_mean(te.add(pos, neg)), -1.0)
