"""Dense tensors with reverse-mode automatic differentiation.

Every value flowing through the model is a :class:`Tensor`: a row-major
numpy array plus an optional node in the computation graph. Operations
record backward closures while gradient tracking is enabled; calling
:func:`backward` on a scalar loss replays the tape in reverse topological
order and returns gradients for every tracked leaf.

Conventions fixed here and reused everywhere:

* shapes are explicit; binary ops require identical shapes (the only
  broadcasting allowed is multiplication by a scalar via :func:`scale`,
  plus the explicit tiling ops)
* conv2d is cross-correlation with zero padding
* bilinear upsampling uses the align-corners-false convention
* float64 is the verification dtype: conv2d in float64 accumulates its
  sum in fixed (channel, row, col) order so it is bit-comparable against
  a naive loop reference; float32 takes the fast BLAS path for training
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "ShapeError",
    "TapeError",
    "no_grad",
    "backward",
    "trace",
    "grad_check",
    "add",
    "sub",
    "mul",
    "scale",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "log",
    "clamp",
    "matmul",
    "conv2d",
    "softmax",
    "concat",
    "narrow",
    "reshape",
    "transpose2d",
    "upsample_bilinear",
    "tile_spatial",
    "tile_channels",
    "expand_cols",
    "embedding_rows",
    "tensor_sum",
    "tensor_mean",
    "zeros",
    "ones",
    "full",
    "uniform",
]


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent with an operation."""


class TapeError(RuntimeError):
    """Raised on invalid use of the gradient tape."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that suspends graph recording (thread-local)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class _Node:
    """One record on the tape: output tensor, parent tensors, backward closure."""

    __slots__ = ("out", "parents", "backward_fn", "op", "consumed")

    def __init__(self, out, parents, backward_fn, op):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.consumed = False


class Tensor:
    """Immutable n-dimensional array, optionally tracked for gradients.

    The underlying array is marked read-only; all operations return new
    tensors. ``requires_grad=True`` creates a tracked leaf whose gradient
    :func:`backward` will report.
    """

    __slots__ = ("data", "requires_grad", "node")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.node = _Node(self, (), None, "leaf") if requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Read-only view of the underlying array."""
        return self.data

    def tracked(self) -> bool:
        return self.node is not None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype.name}{flag})"


def _wrap(data: np.ndarray) -> Tensor:
    t = Tensor.__new__(Tensor)
    if not isinstance(data, np.ndarray):
        data = np.asarray(data)  # rank-0 arithmetic yields numpy scalars
    if not data.flags.c_contiguous:
        data = np.ascontiguousarray(data)
    data.flags.writeable = False
    t.data = data
    t.requires_grad = False
    t.node = None
    return t


def _record(out: Tensor, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if _grad_enabled() and any(p.node is not None for p in parents):
        out.node = _Node(out, tuple(parents), backward_fn, op)
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {list(a.shape)} and {list(b.shape)} differ")
    if a.dtype != b.dtype:
        raise TypeError(f"{op}: operand dtypes {a.dtype.name} and {b.dtype.name} differ")


# ---------------------------------------------------------------------------
# constructors


def zeros(shape, dtype=np.float64, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float64, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def full(shape, value, dtype=np.float64, requires_grad=False) -> Tensor:
    return Tensor(np.full(shape, value, dtype=dtype), requires_grad=requires_grad)


def uniform(rng: np.random.Generator, low: float, high: float, shape,
            dtype=np.float64, requires_grad=False) -> Tensor:
    data = rng.uniform(low, high, size=shape).astype(dtype)
    return Tensor(data, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out = _wrap(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out = _wrap(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    out = _wrap(a.data * b.data)
    return _record(out, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, s) -> Tensor:
    """Multiply by a scalar: a python float or a rank-0 tensor (tracked)."""
    if isinstance(s, Tensor):
        if s.shape != ():
            raise ShapeError(f"scale: scalar must be rank-0, got shape {list(s.shape)}")
        out = _wrap(a.data * s.data)

        def bwd(g):
            return (g * s.data, np.asarray((g * a.data).sum(), dtype=a.dtype))

        return _record(out, (a, s), bwd, "scale")
    s = float(s)
    out = _wrap(a.data * s)
    return _record(out, (a,), lambda g: (g * s,), "scale")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    out = _wrap(out_data)
    return _record(out, (a,), lambda g: (g * out_data * (1.0 - out_data),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    out = _wrap(out_data)
    return _record(out, (a,), lambda g: (g * (1.0 - out_data * out_data),), "tanh")


def relu(a: Tensor) -> Tensor:
    out = _wrap(np.maximum(a.data, 0.0))
    return _record(out, (a,), lambda g: (g * (a.data > 0),), "relu")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    out = _wrap(out_data)
    return _record(out, (a,), lambda g: (g * out_data,), "exp")


def log(a: Tensor) -> Tensor:
    out = _wrap(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,), "log")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = _wrap(np.clip(a.data, lo, hi))
    mask = (a.data >= lo) & (a.data <= hi)
    return _record(out, (a,), lambda g: (g * mask,), "clamp")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {list(a.shape)} and {list(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions disagree, {list(a.shape)} x {list(b.shape)}")
    if a.dtype != b.dtype:
        raise TypeError(f"matmul: operand dtypes {a.dtype.name} and {b.dtype.name} differ")
    out = _wrap(a.data @ b.data)
    return _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


# ---------------------------------------------------------------------------
# convolution


def _corr2d(xp: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """Valid cross-correlation of a padded [C,Hp,Wp] input with [O,C,k,k].

    float64 accumulates term-by-term in (c, u, v) order so the result is
    bit-identical to a naive nested-loop reference; float32 uses im2col +
    BLAS for speed.
    """
    o_ch, c_ch, k, _ = w.shape
    hp, wp = xp.shape[1], xp.shape[2]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    if xp.dtype == np.float64:
        out = np.zeros((o_ch, ho, wo), dtype=xp.dtype)
        for c in range(c_ch):
            for u in range(k):
                for v in range(k):
                    win = xp[c,
                             u:u + (ho - 1) * stride + 1:stride,
                             v:v + (wo - 1) * stride + 1:stride]
                    out += win[None, :, :] * w[:, c, u, v][:, None, None]
        return out
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c_ch * k * k, ho * wo)
    return (w.reshape(o_ch, c_ch * k * k) @ cols).reshape(o_ch, ho, wo)


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           padding: int = 0, stride: int = 1) -> Tensor:
    """2-D cross-correlation: [C_in,H,W] * [C_out,C_in,k,k] -> [C_out,H',W'].

    Zero padding; H' = (H + 2*padding - k)//stride + 1. With odd k and
    padding (k-1)//2 the spatial size is preserved at stride 1.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d: input must be [C,H,W], got {list(x.shape)}")
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be [C_out,C_in,k,k], got {list(kernel.shape)}")
    o_ch, c_ch, k, k2 = kernel.shape
    if k != k2:
        raise ShapeError(f"conv2d: kernel must be square, got {k}x{k2} (axes 2, 3)")
    if x.shape[0] != c_ch:
        raise ShapeError(
            f"conv2d: input channels (axis 0) = {x.shape[0]} but kernel expects {c_ch} (axis 1)")
    if bias is not None and bias.shape != (o_ch,):
        raise ShapeError(
            f"conv2d: bias shape {list(bias.shape)} does not match output channels {o_ch} (axis 0)")
    if padding < 0 or stride < 1:
        raise ShapeError(f"conv2d: invalid padding={padding} / stride={stride}")
    h, w_in = x.shape[1], x.shape[2]
    if h + 2 * padding < k or w_in + 2 * padding < k:
        raise ShapeError(
            f"conv2d: kernel size {k} exceeds padded input {h + 2 * padding}x{w_in + 2 * padding}")
    if x.dtype != kernel.dtype or (bias is not None and bias.dtype != x.dtype):
        raise TypeError("conv2d: operand dtypes differ")

    if padding:
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    out_data = _corr2d(xp, kernel.data, stride)
    if bias is not None:
        out_data = out_data + bias.data[:, None, None]
    out = _wrap(out_data)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bwd(g):
        ho, wo = g.shape[1], g.shape[2]
        # input gradient: dilate by stride, pad by k-1, correlate with the
        # channel-swapped, spatially flipped kernel
        gd = np.zeros((o_ch, (ho - 1) * stride + 1, (wo - 1) * stride + 1), dtype=g.dtype)
        gd[:, ::stride, ::stride] = g
        gp = np.pad(gd, ((0, 0), (k - 1, k - 1), (k - 1, k - 1)))
        wflip = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        core = _corr2d(gp, np.ascontiguousarray(wflip), 1)
        dxp = np.zeros_like(xp)
        dxp[:, :core.shape[1], :core.shape[2]] = core
        dx = dxp[:, padding:padding + h, padding:padding + w_in] if padding else dxp
        # kernel gradient: correlate input windows with the output gradient
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
        win = win[:, ::stride, ::stride]
        dw = np.tensordot(g, win, axes=([1, 2], [1, 2]))
        if bias is None:
            return (np.ascontiguousarray(dx), dw)
        return (np.ascontiguousarray(dx), dw, g.sum(axis=(1, 2)))

    return _record(out, parents, bwd, "conv2d")


# ---------------------------------------------------------------------------
# softmax


def softmax(v: Tensor) -> Tensor:
    """Stable softmax over a 1-D tensor (max subtraction)."""
    if v.data.ndim != 1 or v.size < 1:
        raise ShapeError(f"softmax: expected non-empty 1-D tensor, got shape {list(v.shape)}")
    shifted = v.data - v.data.max()
    e = np.exp(shifted)
    out_data = e / e.sum()
    out = _wrap(out_data)

    def bwd(g):
        return (out_data * (g - float(np.dot(g, out_data))),)

    return _record(out, (v,), bwd, "softmax")


# ---------------------------------------------------------------------------
# shape manipulation


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    ndim = tensors[0].data.ndim
    if not 0 <= axis < ndim:
        raise ShapeError(f"concat: axis {axis} out of range for rank {ndim}")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.data.ndim != ndim or any(
                t.shape[i] != ref[i] for i in range(ndim) if i != axis):
            raise ShapeError(
                f"concat: shape {list(t.shape)} incompatible with {list(ref)} on axis {axis}")
        if t.dtype != tensors[0].dtype:
            raise TypeError("concat: operand dtypes differ")
    out = _wrap(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]

    def bwd(g):
        grads = []
        offset = 0
        for s in sizes:
            sl = [slice(None)] * ndim
            sl[axis] = slice(offset, offset + s)
            grads.append(np.ascontiguousarray(g[tuple(sl)]))
            offset += s
        return tuple(grads)

    return _record(out, tuple(tensors), bwd, "concat")


def narrow(t: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along `axis`."""
    ndim = t.data.ndim
    if not 0 <= axis < ndim:
        raise ShapeError(f"narrow: axis {axis} out of range for rank {ndim}")
    if start < 0 or length < 1 or start + length > t.shape[axis]:
        raise ShapeError(
            f"narrow: slice [{start}, {start + length}) out of bounds for axis {axis} "
            f"of size {t.shape[axis]}")
    sl = [slice(None)] * ndim
    sl[axis] = slice(start, start + length)
    out = _wrap(t.data[tuple(sl)].copy())

    def bwd(g):
        dg = np.zeros_like(t.data)
        dg[tuple(sl)] = g
        return (dg,)

    return _record(out, (t,), bwd, "narrow")


def reshape(t: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != t.size:
        raise ShapeError(f"reshape: cannot view {list(t.shape)} as {list(shape)}")
    out = _wrap(t.data.reshape(shape).copy())
    return _record(out, (t,), lambda g: (g.reshape(t.shape),), "reshape")


def transpose2d(t: Tensor) -> Tensor:
    if t.data.ndim != 2:
        raise ShapeError(f"transpose2d: expected 2-D tensor, got shape {list(t.shape)}")
    out = _wrap(t.data.T.copy())
    return _record(out, (t,), lambda g: (np.ascontiguousarray(g.T),), "transpose2d")


# ---------------------------------------------------------------------------
# resampling and tiling


def _interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    # align-corners-false: output sample i reads back to (i + .5) * n_in/n_out - .5
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale_f = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale_f - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def upsample_bilinear(t: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of [C,H,W] (align-corners-false, the one convention used)."""
    if t.data.ndim != 3:
        raise ShapeError(f"upsample_bilinear: input must be [C,H,W], got {list(t.shape)}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"upsample_bilinear: output size {out_h}x{out_w} must be positive")
    rmat = _interp_matrix(t.shape[1], out_h, t.dtype)
    cmat = _interp_matrix(t.shape[2], out_w, t.dtype)
    out = _wrap(rmat @ t.data @ cmat.T)

    def bwd(g):
        return (np.ascontiguousarray(rmat.T @ g @ cmat),)

    return _record(out, (t,), bwd, "upsample_bilinear")


def tile_spatial(v: Tensor, h: int, w: int) -> Tensor:
    """Broadcast a channel vector [C] to a constant map [C,h,w]."""
    if v.data.ndim != 1:
        raise ShapeError(f"tile_spatial: expected 1-D tensor, got shape {list(v.shape)}")
    if h < 1 or w < 1:
        raise ShapeError(f"tile_spatial: target size {h}x{w} must be positive")
    out = _wrap(np.broadcast_to(v.data[:, None, None], (v.shape[0], h, w)).copy())
    return _record(out, (v,), lambda g: (g.sum(axis=(1, 2)),), "tile_spatial")


def tile_channels(g_map: Tensor, c: int) -> Tensor:
    """Broadcast a single-channel map [1,H,W] across c channels -> [c,H,W]."""
    if g_map.data.ndim != 3 or g_map.shape[0] != 1:
        raise ShapeError(f"tile_channels: expected [1,H,W], got {list(g_map.shape)}")
    if c < 1:
        raise ShapeError(f"tile_channels: channel count {c} must be positive")
    out = _wrap(np.broadcast_to(g_map.data, (c,) + g_map.shape[1:]).copy())
    return _record(out, (g_map,), lambda g: (g.sum(axis=0, keepdims=True),), "tile_channels")


def expand_cols(v: Tensor, n: int) -> Tensor:
    """Broadcast a vector [L] to [L,n] (each entry repeated along a new axis)."""
    if v.data.ndim != 1:
        raise ShapeError(f"expand_cols: expected 1-D tensor, got shape {list(v.shape)}")
    if n < 1:
        raise ShapeError(f"expand_cols: column count {n} must be positive")
    out = _wrap(np.broadcast_to(v.data[:, None], (v.shape[0], n)).copy())
    return _record(out, (v,), lambda g: (g.sum(axis=1),), "expand_cols")


# ---------------------------------------------------------------------------
# lookup and reductions


def embedding_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row lookup [|V|,C] x ids -> [L,C]; gradients scatter-add into used rows."""
    ids = list(int(i) for i in ids)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding_rows: table must be 2-D, got {list(table.shape)}")
    n_rows = table.shape[0]
    for i in ids:
        if not 0 <= i < n_rows:
            raise IndexError(f"embedding_rows: id {i} out of range [0, {n_rows})")
    idx = np.asarray(ids, dtype=np.int64)
    out = _wrap(table.data[idx].copy())

    def bwd(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        return (dt,)

    return _record(out, (table,), bwd, "embedding_rows")


def tensor_sum(t: Tensor) -> Tensor:
    out = _wrap(np.asarray(t.data.sum(), dtype=t.dtype))
    return _record(out, (t,), lambda g: (np.full(t.shape, float(g), dtype=t.dtype),), "sum")


def tensor_mean(t: Tensor) -> Tensor:
    out = _wrap(np.asarray(t.data.mean(), dtype=t.dtype))
    inv = 1.0 / t.size
    return _record(
        out, (t,), lambda g: (np.full(t.shape, float(g) * inv, dtype=t.dtype),), "mean")


# ---------------------------------------------------------------------------
# tape and backward


class Tape:
    """Topologically ordered record of the operations reaching one output.

    Each record's inputs are produced by earlier records or are leaves;
    reverse iteration is therefore a valid backpropagation order.
    """

    def __init__(self, records: list):
        self.records = records

    def __len__(self):
        return len(self.records)


def trace(t: Tensor) -> Tape:
    """Collect the tape (topological order, leaves first) ending at `t`."""
    if t.node is None:
        raise TapeError("tensor is not part of a recorded computation")
    order = []
    seen = set()
    stack = [(t.node, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.node is not None and id(p.node) not in seen:
                stack.append((p.node, False))
    return Tape(order)


class Gradients:
    """Mapping from tracked leaf tensors to their gradient tensors."""

    def __init__(self, table: dict):
        self._table = table  # id(tensor) -> (tensor, grad Tensor)

    def __getitem__(self, t: Tensor) -> Tensor:
        try:
            return self._table[id(t)][1]
        except KeyError:
            raise KeyError("no gradient recorded for this tensor") from None

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._table

    def get(self, t: Tensor, default=None):
        entry = self._table.get(id(t))
        return entry[1] if entry is not None else default

    def __len__(self):
        return len(self._table)


def backward(loss: Tensor, leaves: Optional[Iterable[Tensor]] = None) -> Gradients:
    """Reverse-mode sweep from a scalar loss.

    Gradients accumulate by sum over all paths. Leaves passed explicitly
    but not reached by the graph get zero gradients of their own shape.
    A tape can be swept once; a second backward over the same loss raises.
    """
    if loss.shape != ():
        raise ShapeError(f"backward: loss must be a scalar, got shape {list(loss.shape)}")
    if loss.node is None:
        raise TapeError("backward: loss has no recorded operations (empty tape)")
    if loss.node.consumed:
        raise TapeError("backward: tape already consumed; rebuild the graph to differentiate again")
    loss.node.consumed = True

    tape = trace(loss)
    grads: dict = {id(loss.node): np.ones((), dtype=loss.dtype)}
    result: dict = {}
    for node in reversed(tape.records):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:  # tracked leaf
            t = node.out
            result[id(t)] = (t, _wrap(np.ascontiguousarray(g)))
            continue
        parent_grads = node.backward_fn(g)
        for p, pg in zip(node.parents, parent_grads):
            if p.node is None or pg is None:
                continue
            if pg.shape != p.data.shape:
                raise ShapeError(
                    f"backward({node.op}): gradient shape {list(pg.shape)} does not match "
                    f"input shape {list(p.shape)}")
            acc = grads.get(id(p.node))
            grads[id(p.node)] = pg if acc is None else acc + pg
    if leaves is not None:
        for t in leaves:
            if t.node is None:
                raise TapeError("backward: listed leaf is not tracked (requires_grad is False)")
            if id(t) not in result:
                result[id(t)] = (t, zeros(t.shape, dtype=t.dtype))
    return Gradients(result)


# ---------------------------------------------------------------------------
# finite-difference verification


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5,
               sample: Optional[int] = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must be scalar-valued and evaluated in double precision. The
    analytic gradient is always computed in full; `sample` optionally
    restricts the finite-difference probe to the `sample` elements with
    the largest analytic magnitude. Central differences cannot resolve
    gradients below the rounding noise of f, so the informative probes
    are the large ones; selection by magnitude keeps the check
    deterministic.
    """
    if x.dtype != np.float64:
        raise TypeError("grad_check: input must be float64")
    if not x.requires_grad:
        raise TapeError("grad_check: input must have requires_grad=True")
    loss = f(x)
    if loss.shape != ():
        raise ShapeError("grad_check: f must return a scalar tensor")
    if loss.dtype != np.float64:
        raise TypeError("grad_check: f must evaluate in float64")
    if not np.isfinite(loss.item()):
        raise FloatingPointError("grad_check: non-finite loss value")
    analytic = backward(loss, leaves=[x])[x].numpy().reshape(-1)
    if not np.all(np.isfinite(analytic)):
        raise FloatingPointError("grad_check: non-finite analytic gradient")

    n = x.size
    if sample is not None and sample < n:
        idx_list = np.argsort(-np.abs(analytic), kind="stable")[:sample]
    else:
        idx_list = np.arange(n)

    base = x.data.reshape(-1).copy()  # snapshot: f may install probes anywhere
    max_err = 0.0
    with no_grad():
        for idx in idx_list:
            for sign in (+1.0, -1.0):
                pert = base.copy()
                pert[idx] += sign * step
                val = f(Tensor(pert.reshape(x.shape))).item()
                if not np.isfinite(val):
                    raise FloatingPointError("grad_check: non-finite intermediate value")
                if sign > 0:
                    plus = val
                else:
                    minus = val
            fd = (plus - minus) / (2.0 * step)
            ga = analytic[idx]
            err = abs(ga - fd) / max(abs(ga), abs(fd), 1e-8)
            max_err = max(max_err, err)
    return max_err
