"""Scene generator: rendering, expression uniqueness, determinism."""

import numpy as np
import pytest

from refseg.dataset import (COLORS, FILLERS, HALVES, KINDS, RELATIONS,
                            SIZES, SUPERLATIVES, SceneConfig, Shape,
                            describe_target, description_tokens, gen_dataset,
                            gen_sample, read_dataset, write_dataset)

CFG = SceneConfig(canvas=64)


# ---------------------------------------------------------------------------
# an independent resolver: token scan + set filtering, no shared code with
# the package's parser


def resolve_oracle(tokens, shapes, canvas):
    rel = next((t for t in tokens if t in RELATIONS), None)
    if rel is not None:
        split = tokens.index(rel)
        head, tail = tokens[:split], tokens[split + 1:]
    else:
        head, tail = tokens, []

    def constraints(part):
        c = {"kind": None, "color": None, "size": None, "half": None, "sup": None}
        for t in part:
            if t in KINDS:
                c["kind"] = t
            elif t in COLORS:
                c["color"] = t
            elif t in SIZES:
                c["size"] = t
            elif t in HALVES and t != "side":
                c["half"] = t
            elif t in SUPERLATIVES:
                c["sup"] = t
            elif t == "shape" or t in FILLERS:
                continue
            else:
                raise AssertionError(f"unknown token {t!r}")
        return c

    def matches(c, s):
        if c["kind"] is not None and s.kind != c["kind"]:
            return False
        if c["color"] is not None and s.color != c["color"]:
            return False
        if c["size"] is not None and s.size != c["size"]:
            return False
        if c["half"] is not None:
            mid = canvas / 2.0
            if c["half"] == "left" and not s.cx < mid:
                return False
            if c["half"] == "right" and not s.cx > mid:
                return False
            if c["half"] == "top" and not s.cy < mid:
                return False
            if c["half"] == "bottom" and not s.cy > mid:
                return False
        return True

    hc = constraints(head)
    cand = [i for i, s in enumerate(shapes) if matches(hc, s)]
    if rel is not None:
        rc = constraints(tail)
        kept = []
        for i in cand:
            refs = [j for j, s in enumerate(shapes)
                    if j != i and matches(rc, s)]
            if not refs:
                continue
            if rel == "above" and all(shapes[i].cy < shapes[j].cy for j in refs):
                kept.append(i)
            if rel == "below" and all(shapes[i].cy > shapes[j].cy for j in refs):
                kept.append(i)
        cand = kept
    if hc["sup"] is not None and cand:
        key = {"leftmost": lambda s: s.cx, "rightmost": lambda s: -s.cx,
               "topmost": lambda s: s.cy, "bottommost": lambda s: -s.cy}[hc["sup"]]
        vals = [key(shapes[i]) for i in cand]
        best = min(vals)
        winners = [i for i, v in zip(cand, vals) if v == best]
        cand = winners if len(winners) == 1 else []
    return cand


def shapes_of(sample):
    return [Shape.from_meta(d) for d in sample.meta["shapes"]]


def test_expressions_resolve_uniquely_to_the_masked_shape():
    ds = gen_dataset(11, 300, CFG)
    for s in ds:
        got = resolve_oracle(s.tokens, shapes_of(s), s.meta["canvas"])
        assert got == [s.meta["target"]], (s.expression, got)


def test_generator_deterministic():
    a = gen_dataset(42, 30, CFG)
    b = gen_dataset(42, 30, CFG)
    for x, y in zip(a, b):
        assert x.expression == y.expression
        np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(x.mask, y.mask)
    c = gen_dataset(43, 30, CFG)
    assert any(x.expression != y.expression or (x.image != y.image).any()
               for x, y in zip(a, c))


def test_sample_invariants():
    ds = gen_dataset(12, 60, CFG)
    for s in ds:
        assert s.image.shape == (3, 64, 64)
        assert s.image.dtype == np.float32
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert s.mask.shape == (64, 64)
        assert set(np.unique(s.mask)) <= {0, 1}
        assert s.mask.sum() > 0
        assert 1 <= len(s.tokens) <= CFG.max_tokens
        assert 2 <= len(s.meta["shapes"]) <= 5


def test_mask_pixels_carry_target_color():
    """Shapes are disjoint, so mask pixels show the target's pure color."""
    ds = gen_dataset(13, 20, CFG)
    for s in ds:
        target = shapes_of(s)[s.meta["target"]]
        rgb = COLORS[target.color]
        got = s.image[:, s.mask.astype(bool)]
        for ch in range(3):
            assert np.abs(got[ch] - rgb[ch]).max() < 0.35  # shading jitter only


def test_masks_of_distinct_shapes_disjoint():
    from refseg.dataset import shape_mask
    ds = gen_dataset(14, 20, CFG)
    for s in ds:
        shapes = shapes_of(s)
        rasters = [shape_mask(sh, s.meta["canvas"]) for sh in shapes]
        for i in range(len(rasters)):
            for j in range(i + 1, len(rasters)):
                assert not np.logical_and(rasters[i], rasters[j]).any()


def test_single_shape_scene_needs_no_attributes():
    cfg = SceneConfig(canvas=64, min_shapes=1, max_shapes=1)
    ds = gen_dataset(15, 10, cfg)
    semantic = set(COLORS) | set(SIZES) | set(HALVES) | set(SUPERLATIVES) | set(RELATIONS)
    for s in ds:
        assert not semantic.intersection(s.tokens), s.expression
        assert any(t in KINDS for t in s.tokens)


def test_same_kind_same_color_twins_force_spatial_word():
    twins = [Shape("circle", "red", "small", 18.0, 20.0, 7.0),
             Shape("circle", "red", "small", 46.0, 44.0, 7.0)]
    desc = describe_target(twins, 0, 64)
    assert desc is not None
    tokens = description_tokens(desc)
    spatial = set(HALVES) | set(SUPERLATIVES) | set(RELATIONS)
    assert spatial.intersection(tokens), tokens


def test_description_prefers_cheapest():
    shapes = [Shape("circle", "red", "small", 20.0, 20.0, 7.0),
              Shape("square", "blue", "large", 45.0, 45.0, 12.0)]
    desc = describe_target(shapes, 0, 64)
    tokens = description_tokens(desc)
    assert tokens == ["circle"]


def test_expression_length_buckets_covered():
    ds = gen_dataset(16, 400, CFG)
    lengths = {len(s.tokens) for s in ds}
    assert any(n <= 5 for n in lengths)
    assert any(6 <= n <= 7 for n in lengths)
    assert any(8 <= n <= 10 for n in lengths)


def test_shape_dict_roundtrip():
    s = Shape("triangle", "yellow", "large", 31.5, 12.25, 10.125)
    assert Shape.from_meta(s.to_meta()) == s


def test_gen_sample_respects_bbox_separation():
    rng = np.random.default_rng(17)
    for _ in range(10):
        s = gen_sample(rng, CFG)
        shapes = shapes_of(s)
        boxes = [sh.bbox for sh in shapes]
        from refseg.dataset import bbox_iou
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                assert bbox_iou(boxes[i], boxes[j]) < CFG.bbox_iou_max


# ---------------------------------------------------------------------------
# dataset directory round trip


def test_write_read_roundtrip(tmp_path):
    ds = gen_dataset(18, 8, CFG)
    write_dataset(tmp_path / "d", ds)
    back = read_dataset(tmp_path / "d")
    assert len(back) == len(ds)
    for x, y in zip(ds, back):
        assert x.expression == y.expression
        np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(x.mask, y.mask)
        assert x.meta["target"] == y.meta["target"]


def test_read_missing_dir_raises(tmp_path):
    from refseg.fileio import FileFormatError
    with pytest.raises(FileFormatError):
        read_dataset(tmp_path / "nope")
