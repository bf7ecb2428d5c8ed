"""Small trainable conv stack producing multi-level visual features.

A stand-in for a large pretrained network: a stem of stride-2 convs
(two by default, image size / 4) brings the image down, then a chain of
3x3 conv blocks runs at that resolution. The output after each block is
tapped and projected to a common channel count with a per-tap 1x1 conv,
so all levels share one spatial size. Levels are returned deepest first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import tensor as te
from .tensor import ShapeError, Tensor

DEFAULT_STEM_CHANNELS = (16, 32)
DEFAULT_BLOCK_CHANNELS = 32
DEFAULT_NUM_LEVELS = 3


def _conv_init(rng: np.random.Generator, c_out: int, c_in: int, k: int,
               dtype, gain: float) -> Tuple[Tensor, Tensor]:
    # variance-preserving: uniform with std gain/sqrt(fan_in), gain sqrt(2)
    # ahead of ReLU and 1 for the linear taps; anything weaker starves the
    # fusion stage of visual signal next to the unit-scale coordinate maps
    bound = gain * np.sqrt(3.0 / (c_in * k * k))
    kernel = te.uniform(rng, -bound, bound, (c_out, c_in, k, k),
                        dtype=dtype, requires_grad=True)
    bias = te.zeros((c_out,), dtype=dtype, requires_grad=True)
    return kernel, bias


@dataclass
class BackboneParams:
    """Stem convs (stride 2 each), block convs, per-tap 1x1 projections."""

    stem_kernels: List[Tensor]
    stem_biases: List[Tensor]
    block_kernels: List[Tensor]   # 3x3, stride 1, one per level
    block_biases: List[Tensor]
    proj_kernels: List[Tensor]    # 1x1 to out_channels; index 0 = deepest tap
    proj_biases: List[Tensor]

    @property
    def out_channels(self) -> int:
        return self.proj_kernels[0].shape[0]

    @property
    def num_levels(self) -> int:
        return len(self.block_kernels)

    @property
    def stride_product(self) -> int:
        return 2 ** len(self.stem_kernels)

    def receptive_fields(self) -> List[int]:
        """Input-pixel receptive field per returned level, deepest first.

        Computed from construction (kernel sizes and strides), so the
        deeper-sees-more property holds by arithmetic, not measurement.
        """
        rf, jump = 1, 1
        for _ in self.stem_kernels:
            rf += 2 * jump  # 3x3 kernel adds (k-1)*jump
            jump *= 2
        fields = []
        for _ in self.block_kernels:
            rf += 2 * jump  # one 3x3 stride-1 conv per block
            fields.append(rf)
        return fields[::-1]


def init_backbone(rng: np.random.Generator, out_channels: int,
                  stem_channels: Sequence[int] = DEFAULT_STEM_CHANNELS,
                  block_channels: int = DEFAULT_BLOCK_CHANNELS,
                  num_levels: int = DEFAULT_NUM_LEVELS,
                  dtype=np.float64) -> BackboneParams:
    if not stem_channels or num_levels < 1:
        raise ShapeError("init_backbone: need at least one stem conv and one level")
    stem_kernels, stem_biases = [], []
    c_in = 3
    for c_out in stem_channels:
        k, b = _conv_init(rng, c_out, c_in, 3, dtype, gain=np.sqrt(2.0))
        stem_kernels.append(k)
        stem_biases.append(b)
        c_in = c_out
    block_kernels, block_biases = [], []
    for _ in range(num_levels):
        k, b = _conv_init(rng, block_channels, c_in, 3, dtype, gain=np.sqrt(2.0))
        block_kernels.append(k)
        block_biases.append(b)
        c_in = block_channels
    proj_kernels, proj_biases = [], []
    for _ in range(num_levels):
        # gain 3 leaves the projected levels near unit variance on real
        # images; the downstream fusion conv shrinks its input by roughly
        # half, so weaker levels stall the mask head for thousands of steps
        k, b = _conv_init(rng, out_channels, block_channels, 1, dtype, gain=3.0)
        proj_kernels.append(k)
        proj_biases.append(b)
    return BackboneParams(stem_kernels, stem_biases, block_kernels, block_biases,
                          proj_kernels, proj_biases)


def extract_levels(image: Tensor, p: BackboneParams) -> List[Tensor]:
    """Run the stack and return num_levels projected feature maps, deepest first."""
    if image.data.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"extract_levels: expected [3,H,W] image, got {list(image.shape)}")
    h, w = image.shape[1], image.shape[2]
    stride = p.stride_product
    if h % stride or w % stride:
        raise ShapeError(
            f"extract_levels: image size {h}x{w} not divisible by stride {stride}")
    x = image
    for k, b in zip(p.stem_kernels, p.stem_biases):
        x = te.relu(te.conv2d(x, k, b, padding=1, stride=2))
    taps = []
    for k, b in zip(p.block_kernels, p.block_biases):
        x = te.relu(te.conv2d(x, k, b, padding=1))
        taps.append(x)
    # taps[-1] is the deepest block output; projections are indexed deepest first
    levels = []
    for i, tap in enumerate(reversed(taps)):
        levels.append(te.conv2d(tap, p.proj_kernels[i], p.proj_biases[i]))
    return levels
