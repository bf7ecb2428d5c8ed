"""Word-attentive multimodal encoding over a visual feature map.

Each word's reweighted feature is tiled across the spatial grid and
concatenated with the visual features and an 8-channel coordinate map;
a ConvLSTM consumes the per-word maps in order, with the cell update
modulated by that word's attention weight:

    C' = a * (i x g) + (1 - a) * (f x C_prev)

so a word with high attention lets its multimodal evidence in while a
low-attention word mostly preserves the accumulated memory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as te
from .language import WordFeatures
from .recurrent import ConvLstmParams, RecurrentState, convlstm_gates, zero_state
from .tensor import ShapeError, Tensor

SPATIAL_CHANNELS = 8


def spatial_coords(width: int, height: int, dtype=np.float64) -> Tensor:
    """8-channel coordinate map [8, height, width], all values in [-1, 1].

    Channels 0-2: normalized left edge, center, right edge of each cell's
    horizontal extent (image spans [-1, 1]); channels 3-5 the vertical
    analogue; channels 6-7 the relative cell width 1/W and height 1/H.
    """
    if width < 1 or height < 1:
        raise ShapeError(f"spatial_coords: size {width}x{height} must be positive")
    out = np.empty((SPATIAL_CHANNELS, height, width), dtype=dtype)
    xs = np.arange(width, dtype=dtype)
    ys = np.arange(height, dtype=dtype)
    out[0] = np.broadcast_to(2.0 * xs / width - 1.0, (height, width))
    out[1] = np.broadcast_to(2.0 * (xs + 0.5) / width - 1.0, (height, width))
    out[2] = np.broadcast_to(2.0 * (xs + 1.0) / width - 1.0, (height, width))
    out[3] = np.broadcast_to((2.0 * ys / height - 1.0)[:, None], (height, width))
    out[4] = np.broadcast_to((2.0 * (ys + 0.5) / height - 1.0)[:, None], (height, width))
    out[5] = np.broadcast_to((2.0 * (ys + 1.0) / height - 1.0)[:, None], (height, width))
    out[6] = 1.0 / width
    out[7] = 1.0 / height
    return Tensor(out)


def build_word_multimodal(visual: Tensor, spatial: Tensor, word_feat: Tensor) -> Tensor:
    """Concat visual [C_v,H,W], spatial [8,H,W], and the tiled word feature [C_r]."""
    if visual.data.ndim != 3 or spatial.data.ndim != 3:
        raise ShapeError("build_word_multimodal: visual and spatial maps must be [C,H,W]")
    if visual.shape[1:] != spatial.shape[1:]:
        raise ShapeError(
            f"build_word_multimodal: visual {list(visual.shape[1:])} and spatial "
            f"{list(spatial.shape[1:])} sizes differ")
    if spatial.shape[0] != SPATIAL_CHANNELS:
        raise ShapeError(
            f"build_word_multimodal: spatial map has {spatial.shape[0]} channels, "
            f"expected {SPATIAL_CHANNELS}")
    if word_feat.data.ndim != 1:
        raise ShapeError("build_word_multimodal: word feature must be 1-D")
    tiled = te.tile_spatial(word_feat, visual.shape[1], visual.shape[2])
    return te.concat([visual, spatial, tiled], axis=0)


def modulated_convlstm_step(m: Tensor, attn: Tensor, state: RecurrentState,
                            p: ConvLstmParams) -> RecurrentState:
    """ConvLSTM step with the cell update modulated by a scalar in [0, 1]."""
    if attn.shape != ():
        raise ShapeError(
            f"modulated_convlstm_step: attention must be a rank-0 scalar, "
            f"got shape {list(attn.shape)}")
    a_val = attn.item()
    if not 0.0 <= a_val <= 1.0:
        raise ValueError(f"modulated_convlstm_step: attention {a_val} outside [0, 1]")
    i, f, o, g = convlstm_gates(m, state, p)
    one = Tensor(np.asarray(1.0, dtype=m.dtype))
    new_cell = te.add(te.scale(te.mul(i, g), attn),
                      te.scale(te.mul(f, state.cell), te.sub(one, attn)))
    new_hidden = te.mul(o, te.tanh(new_cell))
    return RecurrentState(hidden=new_hidden, cell=new_cell)


@dataclass
class EncoderOutput:
    """Final hidden map plus, when asked, each intermediate hidden map."""

    hidden: Tensor  # [C_s, H, W]
    step_hiddens: Optional[list[Tensor]] = None


def encode(visual: Tensor, word_features: WordFeatures, p: ConvLstmParams,
           spatial: Optional[Tensor] = None,
           keep_steps: bool = False) -> EncoderOutput:
    """Run the modulated ConvLSTM over words in natural order, return H_L."""
    n_words = word_features.hidden.shape[0]
    if n_words < 1:
        raise ShapeError("encode: need at least one word")
    if spatial is None:
        spatial = spatial_coords(visual.shape[2], visual.shape[1], dtype=visual.dtype)
    feat_dim = word_features.reweighted.shape[1]
    state = zero_state((p.hidden_channels,) + visual.shape[1:], dtype=visual.dtype)
    steps = [] if keep_steps else None
    for l in range(n_words):
        word_feat = te.reshape(te.narrow(word_features.reweighted, 0, l, 1), (feat_dim,))
        attn = te.reshape(te.narrow(word_features.attention, 0, l, 1), ())
        m = build_word_multimodal(visual, spatial, word_feat)
        state = modulated_convlstm_step(m, attn, state, p)
        if keep_steps:
            steps.append(state.hidden)
    return EncoderOutput(hidden=state.hidden, step_hiddens=steps)
