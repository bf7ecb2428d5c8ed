"""LSTM cell, bidirectional runner, and the convolutional LSTM cell.

Gate order is fixed as (input, forget, output, memory) everywhere; the
four gate blocks are contiguous slices of the stacked weight output.
Initial hidden and cell states are zero, the forget-gate bias starts at
+1.0, and weights draw uniformly from +-1/sqrt(fan_in).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as te
from .tensor import ShapeError, Tensor

GATE_ORDER = ("i", "f", "o", "g")

FORGET_BIAS_INIT = 1.0


@dataclass
class LstmParams:
    """Fully connected LSTM parameters, gates stacked along the first axis."""

    w_input: Tensor   # [4*hidden, input]
    w_hidden: Tensor  # [4*hidden, hidden]
    bias: Tensor      # [4*hidden]

    @property
    def hidden_size(self) -> int:
        return self.w_hidden.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_input.shape[1]


@dataclass
class ConvLstmParams:
    """ConvLSTM parameters: one conv over concat(input, hidden) channels."""

    kernel: Tensor  # [4*hidden_ch, input_ch + hidden_ch, k, k]
    bias: Tensor    # [4*hidden_ch]

    @property
    def hidden_channels(self) -> int:
        return self.kernel.shape[0] // 4

    @property
    def input_channels(self) -> int:
        return self.kernel.shape[1] - self.hidden_channels

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[2]

    @property
    def padding(self) -> int:
        return (self.kernel_size - 1) // 2


@dataclass
class RecurrentState:
    """Hidden/cell pair; shapes always match."""

    hidden: Tensor
    cell: Tensor

    def __post_init__(self):
        if self.hidden.shape != self.cell.shape:
            raise ShapeError(
                f"recurrent state: hidden {list(self.hidden.shape)} and cell "
                f"{list(self.cell.shape)} shapes differ")


def init_lstm_params(rng: np.random.Generator, input_size: int, hidden_size: int,
                     dtype=np.float64) -> LstmParams:
    if hidden_size < 1 or input_size < 1:
        raise ShapeError("init_lstm_params: sizes must be positive")
    bound_x = 1.0 / np.sqrt(input_size)
    bound_h = 1.0 / np.sqrt(hidden_size)
    bias = np.zeros(4 * hidden_size, dtype=dtype)
    bias[hidden_size:2 * hidden_size] = FORGET_BIAS_INIT
    return LstmParams(
        w_input=te.uniform(rng, -bound_x, bound_x, (4 * hidden_size, input_size),
                           dtype=dtype, requires_grad=True),
        w_hidden=te.uniform(rng, -bound_h, bound_h, (4 * hidden_size, hidden_size),
                            dtype=dtype, requires_grad=True),
        bias=Tensor(bias, requires_grad=True),
    )


def init_convlstm_params(rng: np.random.Generator, input_channels: int,
                         hidden_channels: int, kernel_size: int = 3,
                         dtype=np.float64) -> ConvLstmParams:
    if kernel_size % 2 == 0:
        raise ShapeError("init_convlstm_params: kernel size must be odd")
    total_in = input_channels + hidden_channels
    bound = 1.0 / np.sqrt(total_in * kernel_size * kernel_size)
    bias = np.zeros(4 * hidden_channels, dtype=dtype)
    bias[hidden_channels:2 * hidden_channels] = FORGET_BIAS_INIT
    return ConvLstmParams(
        kernel=te.uniform(rng, -bound, bound,
                          (4 * hidden_channels, total_in, kernel_size, kernel_size),
                          dtype=dtype, requires_grad=True),
        bias=Tensor(bias, requires_grad=True),
    )


def zero_state(shape, dtype=np.float64) -> RecurrentState:
    return RecurrentState(hidden=te.zeros(shape, dtype=dtype),
                          cell=te.zeros(shape, dtype=dtype))


def _gate_slices(stacked: Tensor, hidden: int, axis: int):
    i = te.narrow(stacked, axis, 0, hidden)
    f = te.narrow(stacked, axis, hidden, hidden)
    o = te.narrow(stacked, axis, 2 * hidden, hidden)
    g = te.narrow(stacked, axis, 3 * hidden, hidden)
    return te.sigmoid(i), te.sigmoid(f), te.sigmoid(o), te.tanh(g)


def lstm_step(x: Tensor, state: RecurrentState, p: LstmParams) -> RecurrentState:
    """One LSTM step on a vector input.

    C' = i*g + f*C, H' = o*tanh(C').
    """
    if x.shape != (p.input_size,):
        raise ShapeError(
            f"lstm_step: input shape {list(x.shape)} does not match params "
            f"(expected [{p.input_size}])")
    hidden = p.hidden_size
    if state.hidden.shape != (hidden,):
        raise ShapeError(
            f"lstm_step: state shape {list(state.hidden.shape)} does not match "
            f"hidden size {hidden}")
    pre = te.matmul(p.w_input, te.reshape(x, (p.input_size, 1)))
    pre = te.add(pre, te.matmul(p.w_hidden, te.reshape(state.hidden, (hidden, 1))))
    pre = te.add(te.reshape(pre, (4 * hidden,)), p.bias)
    i, f, o, g = _gate_slices(pre, hidden, axis=0)
    new_cell = te.add(te.mul(i, g), te.mul(f, state.cell))
    new_hidden = te.mul(o, te.tanh(new_cell))
    return RecurrentState(hidden=new_hidden, cell=new_cell)


def bilstm_run(embeds: Tensor, fwd: LstmParams, bwd: LstmParams) -> Tensor:
    """Run both directions over [L, C_e]; row l is [fwd hidden_l, bwd hidden_l]."""
    if embeds.data.ndim != 2 or embeds.shape[0] < 1:
        raise ShapeError(
            f"bilstm_run: expected non-empty [L, C_e] input, got {list(embeds.shape)}")
    length, in_dim = embeds.shape
    rows = [te.reshape(te.narrow(embeds, 0, l, 1), (in_dim,)) for l in range(length)]

    fwd_hidden = []
    state = zero_state((fwd.hidden_size,), dtype=embeds.dtype)
    for l in range(length):
        state = lstm_step(rows[l], state, fwd)
        fwd_hidden.append(state.hidden)

    bwd_hidden = [None] * length
    state = zero_state((bwd.hidden_size,), dtype=embeds.dtype)
    for l in range(length - 1, -1, -1):
        state = lstm_step(rows[l], state, bwd)
        bwd_hidden[l] = state.hidden

    rows_out = [
        te.reshape(te.concat([fwd_hidden[l], bwd_hidden[l]], axis=0),
                   (1, fwd.hidden_size + bwd.hidden_size))
        for l in range(length)
    ]
    return te.concat(rows_out, axis=0)


def convlstm_gates(x: Tensor, state: RecurrentState, p: ConvLstmParams):
    """Gate maps from one convolution over the channel-concatenated (X, H_prev)."""
    if x.data.ndim != 3:
        raise ShapeError(f"convlstm: input must be [C,H,W], got {list(x.shape)}")
    if x.shape[1:] != state.hidden.shape[1:]:
        raise ShapeError(
            f"convlstm: input spatial size {list(x.shape[1:])} does not match state "
            f"{list(state.hidden.shape[1:])}")
    if x.shape[0] != p.input_channels:
        raise ShapeError(
            f"convlstm: input channels {x.shape[0]} do not match params "
            f"(expected {p.input_channels})")
    stacked = te.conv2d(te.concat([x, state.hidden], axis=0), p.kernel, p.bias,
                        padding=p.padding)
    return _gate_slices(stacked, p.hidden_channels, axis=0)


def convlstm_step(x: Tensor, state: RecurrentState, p: ConvLstmParams) -> RecurrentState:
    """Standard ConvLSTM step: same cell equations as the LSTM, maps for states."""
    i, f, o, g = convlstm_gates(x, state, p)
    new_cell = te.add(te.mul(i, g), te.mul(f, state.cell))
    new_hidden = te.mul(o, te.tanh(new_cell))
    return RecurrentState(hidden=new_hidden, cell=new_cell)
