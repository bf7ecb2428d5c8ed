"""Convolutional backbone: level extraction, strides, activations."""

import numpy as np
import pytest

import refseg.tensor as te
from refseg.backbone import (DEFAULT_BLOCK_CHANNELS, DEFAULT_NUM_LEVELS,
                             DEFAULT_STEM_CHANNELS, extract_levels,
                             init_backbone)
from refseg.tensor import ShapeError, Tensor


def make(rng, out_channels=6, stem=(4, 5), block=7, levels=3):
    return init_backbone(rng, out_channels, stem_channels=stem,
                         block_channels=block, num_levels=levels)


def test_levels_share_one_grid():
    rng = np.random.default_rng(0)
    p = make(rng)
    x = Tensor(rng.random((3, 32, 32)))
    levels = extract_levels(x, p)
    assert len(levels) == 3
    for lv in levels:
        assert lv.shape == (6, 8, 8)   # two stride-2 stem convs: /4


def test_stride_scales_with_stem_depth():
    rng = np.random.default_rng(1)
    p = make(rng, stem=(4, 4, 4))
    x = Tensor(rng.random((3, 32, 32)))
    levels = extract_levels(x, p)
    assert levels[0].shape == (6, 4, 4)  # three stride-2 convs: /8


def test_levels_differ_in_depth():
    rng = np.random.default_rng(2)
    p = make(rng)
    x = Tensor(rng.random((3, 16, 16)))
    a, b, c = extract_levels(x, p)
    assert np.abs(a.data - b.data).max() > 1e-9
    assert np.abs(b.data - c.data).max() > 1e-9


def test_projection_is_linear_no_relu():
    """Level projections keep sign information: negatives must appear."""
    rng = np.random.default_rng(3)
    p = make(rng)
    x = Tensor(rng.random((3, 16, 16)))
    for lv in extract_levels(x, p):
        assert (lv.data < 0.0).any()


def test_gradient_reaches_every_parameter():
    rng = np.random.default_rng(4)
    p = make(rng, out_channels=4, stem=(3, 4), block=5, levels=2)
    params = (list(p.stem_kernels) + list(p.stem_biases) +
              list(p.block_kernels) + list(p.block_biases) +
              list(p.proj_kernels) + list(p.proj_biases))
    x = Tensor(rng.random((3, 16, 16)))
    levels = extract_levels(x, p)
    loss = te.tensor_sum(te.add(te.tensor_sum(levels[0]), te.tensor_sum(levels[1])))
    grads = te.backward(loss)
    for t in params:
        g = grads.get(t)
        assert g is not None
        assert np.abs(g.data).max() > 0.0


def test_rejects_wrong_input_rank():
    rng = np.random.default_rng(5)
    p = make(rng)
    with pytest.raises(ShapeError):
        extract_levels(Tensor(np.zeros((16, 16))), p)


def test_defaults_are_consistent():
    rng = np.random.default_rng(6)
    p = init_backbone(rng, out_channels=8)
    assert len(p.stem_kernels) == len(DEFAULT_STEM_CHANNELS)
    assert len(p.block_kernels) == DEFAULT_NUM_LEVELS
    assert p.block_kernels[0].shape[0] == DEFAULT_BLOCK_CHANNELS
    x = Tensor(rng.random((3, 64, 64)))
    levels = extract_levels(x, p)
    assert len(levels) == DEFAULT_NUM_LEVELS
    assert all(lv.shape == (8, 16, 16) for lv in levels)


def test_deterministic_init():
    a = make(np.random.default_rng(9))
    b = make(np.random.default_rng(9))
    np.testing.assert_array_equal(a.stem_kernels[0].data, b.stem_kernels[0].data)
    np.testing.assert_array_equal(a.proj_kernels[-1].data, b.proj_kernels[-1].data)


def test_feature_scale_useful_at_init():
    """Unit-ish feature variance at init; tiny features stall the fusion."""
    rng = np.random.default_rng(10)
    p = init_backbone(rng, out_channels=8)
    x = Tensor(rng.random((3, 64, 64)))
    for lv in extract_levels(x, p):
        s = lv.data.std()
        assert 0.05 < s < 5.0
