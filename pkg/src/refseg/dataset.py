"""Synthetic referring-segmentation scenes with templated expressions.

A scene is 2-5 flat-colored shapes (circle, square, triangle) on a noisy
gray background, pixel-disjoint and with bounding-box IoU below 0.1. One
shape is the target; the emitted expression is the cheapest description
(fewest meaning-carrying words) that picks out the target uniquely, then
optionally padded with filler words so expression lengths spread across
the report buckets.

Expression grammar (whitespace tokens):

    expr     := ["the"] [SUPER] [SIZE] [COLOR] KIND [half_pp] [rel_pp] [pad]
    half_pp  := "on" "the" HALF "side"
    rel_pp   := REL "the" [SIZE] [COLOR] KIND
    pad      := "in the image" | "shown in the image"
              | "that is shown in the image"

with HALF in {left, right, top, bottom}, SUPER in {leftmost, rightmost,
topmost, bottommost}, REL in {above, below}, and KIND either a concrete
kind or the generic "shape". Filler words carry no meaning; resolution
uses only the semantic words, with attribute/half/relation filters
applied first and a superlative selecting within the filtered set.
Halves compare a shape's center against the canvas midline; "above"
means a strictly smaller row-center than every shape matching the
reference description.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .fileio import (FileFormatError, append_jsonl, read_jsonl, read_tensor_file,
                     to_gray, write_pgm, write_ppm, write_tensor_file)

KINDS = ("circle", "square", "triangle")
GENERIC_KIND = "shape"
COLORS = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.75, 0.15),
    "blue": (0.15, 0.20, 0.85),
    "yellow": (0.85, 0.80, 0.10),
}
SIZES = ("small", "large")
HALVES = ("left", "right", "top", "bottom")
SUPERLATIVES = ("leftmost", "rightmost", "topmost", "bottommost")
RELATIONS = ("above", "below")
FILLERS = ("the", "a", "on", "of", "in", "that", "is", "shown", "image", "side")

# relative to canvas size; classes are separated so the size word is crisp,
# and both are kept large enough that shape boundaries survive a 4x-coarse
# prediction grid
SMALL_RADIUS = (0.12, 0.16)
LARGE_RADIUS = (0.20, 0.26)

PAD_SUFFIXES = (("in", "the", "image"),
                ("shown", "in", "the", "image"),
                ("that", "is", "shown", "in", "the", "image"))


@dataclass
class SceneConfig:
    canvas: int = 64
    min_shapes: int = 2
    max_shapes: int = 5
    max_tokens: int = 12
    bbox_iou_max: float = 0.1
    place_retries: int = 40
    scene_retries: int = 50
    pad_prob: float = 0.6

    def validate(self) -> None:
        if self.canvas < 16:
            raise ValueError("canvas too small")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ValueError("bad shape count range")
        if self.max_tokens < 6:
            raise ValueError("max_tokens must allow at least a relation phrase")


@dataclass
class Shape:
    kind: str
    color: str
    size: str
    cx: float
    cy: float
    radius: float

    @property
    def bbox(self) -> Tuple[float, float, float, float]:
        r = self.radius
        return (self.cx - r, self.cy - r, self.cx + r, self.cy + r)

    def to_meta(self) -> dict:
        return {"kind": self.kind, "color": self.color, "size": self.size,
                "cx": self.cx, "cy": self.cy, "radius": self.radius}

    @classmethod
    def from_meta(cls, d: dict) -> "Shape":
        return cls(kind=d["kind"], color=d["color"], size=d["size"],
                   cx=d["cx"], cy=d["cy"], radius=d["radius"])


@dataclass
class Sample:
    image: np.ndarray       # [3,H,W] float32 in [0,1]
    mask: np.ndarray        # [H,W] uint8, 1 on the referred object
    expression: str
    meta: dict              # canvas, shapes, target index

    @property
    def tokens(self) -> List[str]:
        return self.expression.split()


# ---------------------------------------------------------------------------
# geometry


def shape_mask(shape: Shape, canvas: int) -> np.ndarray:
    """Boolean [canvas, canvas] raster of the shape."""
    yy, xx = np.mgrid[0:canvas, 0:canvas]
    cx, cy, r = shape.cx, shape.cy, shape.radius
    if shape.kind == "circle":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    if shape.kind == "square":
        return (np.abs(xx - cx) <= r) & (np.abs(yy - cy) <= r)
    if shape.kind == "triangle":
        # apex up: width grows linearly from the apex row to the base row
        return ((yy >= cy - r) & (yy <= cy + r)
                & (np.abs(xx - cx) <= (yy - cy + r) / 2.0))
    raise ValueError(f"unknown kind {shape.kind!r}")


def bbox_iou(a: Tuple[float, float, float, float],
             b: Tuple[float, float, float, float]) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


# ---------------------------------------------------------------------------
# descriptions and resolution


@dataclass
class Description:
    """Semantic content of an expression; None fields are unconstrained."""

    kind: str = GENERIC_KIND
    color: Optional[str] = None
    size: Optional[str] = None
    half: Optional[str] = None
    superlative: Optional[str] = None
    relation: Optional[str] = None
    ref: Optional["Description"] = None   # attribute-only, for relations

    def semantic_cost(self) -> int:
        cost = 1  # the kind slot always emits a token
        cost += sum(x is not None for x in (self.color, self.size, self.half,
                                            self.superlative))
        if self.relation is not None:
            cost += 1 + self.ref.semantic_cost()
        return cost


def _attribute_filter(desc: Description, shapes: Sequence[Shape],
                      canvas: int) -> List[int]:
    out = []
    for i, s in enumerate(shapes):
        if desc.kind != GENERIC_KIND and s.kind != desc.kind:
            continue
        if desc.color is not None and s.color != desc.color:
            continue
        if desc.size is not None and s.size != desc.size:
            continue
        if desc.half is not None:
            mid = canvas / 2.0
            ok = {"left": s.cx < mid, "right": s.cx > mid,
                  "top": s.cy < mid, "bottom": s.cy > mid}[desc.half]
            if not ok:
                continue
        out.append(i)
    return out


def resolve(desc: Description, shapes: Sequence[Shape], canvas: int) -> List[int]:
    """Indices of shapes the description matches; unique target iff length 1."""
    cand = _attribute_filter(desc, shapes, canvas)
    if desc.relation is not None:
        kept = []
        for i in cand:
            refs = [j for j in _attribute_filter(desc.ref, shapes, canvas) if j != i]
            if not refs:
                continue
            if desc.relation == "above":
                if all(shapes[i].cy < shapes[j].cy for j in refs):
                    kept.append(i)
            else:
                if all(shapes[i].cy > shapes[j].cy for j in refs):
                    kept.append(i)
        cand = kept
    if desc.superlative is not None and cand:
        axis = {"leftmost": ("cx", min), "rightmost": ("cx", max),
                "topmost": ("cy", min), "bottommost": ("cy", max)}[desc.superlative]
        attr, pick = axis
        values = [getattr(shapes[i], attr) for i in cand]
        best = pick(values)
        winners = [i for i, v in zip(cand, values) if v == best]
        cand = winners if len(winners) == 1 else []
    return cand


def description_tokens(desc: Description) -> List[str]:
    tokens: List[str] = []
    if desc.superlative:
        tokens.append(desc.superlative)
    if desc.size:
        tokens.append(desc.size)
    if desc.color:
        tokens.append(desc.color)
    tokens.append(desc.kind)
    if desc.half:
        tokens += ["on", "the", desc.half, "side"]
    if desc.relation:
        tokens += [desc.relation, "the"]
        if desc.ref.size:
            tokens.append(desc.ref.size)
        if desc.ref.color:
            tokens.append(desc.ref.color)
        tokens.append(desc.ref.kind)
    return tokens


def parse_expression(tokens: Sequence[str]) -> Description:
    """Recover the semantic description; filler words are skipped."""
    rel_idx = next((i for i, t in enumerate(tokens) if t in RELATIONS), None)
    target_part = tokens if rel_idx is None else tokens[:rel_idx]
    desc = Description()
    for t in target_part:
        if t in KINDS or t == GENERIC_KIND:
            desc.kind = t
        elif t in COLORS:
            desc.color = t
        elif t in SIZES:
            desc.size = t
        elif t in HALVES:
            desc.half = t
        elif t in SUPERLATIVES:
            desc.superlative = t
        elif t not in FILLERS:
            raise ValueError(f"unknown token {t!r}")
    if rel_idx is not None:
        desc.relation = tokens[rel_idx]
        ref = Description()
        for t in tokens[rel_idx + 1:]:
            if t in KINDS or t == GENERIC_KIND:
                ref.kind = t
            elif t in COLORS:
                ref.color = t
            elif t in SIZES:
                ref.size = t
            elif t not in FILLERS:
                raise ValueError(f"unknown token {t!r} in reference phrase")
        desc.ref = ref
    return desc


# ---------------------------------------------------------------------------
# generation


def _candidate_descriptions(shapes: Sequence[Shape], target: int):
    """Candidate descriptions of the target, cheapest semantics first.

    Within one cost tier the order is fixed: attributes, then halves,
    then superlatives, then relations; attribute words are easier for a
    learner than relative spatial reasoning, so cheaper descriptions
    double as easier ones.
    """
    t = shapes[target]
    kind_opts = (t.kind, GENERIC_KIND)
    attr_opts = ((None, None), (t.color, None), (None, t.size), (t.color, t.size))
    ref_kinds = []
    for other in shapes:
        if other.kind not in ref_kinds:
            ref_kinds.append(other.kind)
    ref_kinds.append(GENERIC_KIND)
    ATTR, HALF, SUP, REL = range(4)  # tie order within one semantic cost
    out = []
    seq = 0
    for color, size in attr_opts:
        for kind in kind_opts:
            base = Description(kind=kind, color=color, size=size)
            out.append((base.semantic_cost(), ATTR, seq, base)); seq += 1
            for half in HALVES:
                d = Description(kind=kind, color=color, size=size, half=half)
                out.append((d.semantic_cost(), HALF, seq, d)); seq += 1
            for sup in SUPERLATIVES:
                d = Description(kind=kind, color=color, size=size, superlative=sup)
                out.append((d.semantic_cost(), SUP, seq, d)); seq += 1
            for rel in RELATIONS:
                for rcolor, rsize in attr_opts:
                    for rkind in ref_kinds:
                        ref = Description(kind=rkind, color=rcolor, size=rsize)
                        d = Description(kind=kind, color=color, size=size,
                                        relation=rel, ref=ref)
                        out.append((d.semantic_cost(), REL, seq, d)); seq += 1
    out.sort(key=lambda e: (e[0], e[1], e[2]))
    for _, _, _, d in out:
        yield d


def describe_target(shapes: Sequence[Shape], target: int,
                    canvas: int) -> Optional[Description]:
    """Cheapest unique description of the target, or None if there is none."""
    for desc in _candidate_descriptions(shapes, target):
        if resolve(desc, shapes, canvas) == [target]:
            return desc
    return None


def _sample_shape(rng: np.random.Generator, canvas: int) -> Shape:
    kind = KINDS[rng.integers(len(KINDS))]
    color = list(COLORS)[rng.integers(len(COLORS))]
    size = SIZES[rng.integers(len(SIZES))]
    lo, hi = SMALL_RADIUS if size == "small" else LARGE_RADIUS
    r = float(rng.uniform(lo * canvas, hi * canvas))
    margin = r + 1.5
    cx = float(rng.uniform(margin, canvas - margin))
    cy = float(rng.uniform(margin, canvas - margin))
    return Shape(kind=kind, color=color, size=size, cx=cx, cy=cy, radius=r)


def _place_shapes(rng: np.random.Generator, cfg: SceneConfig) -> Optional[List[Tuple[Shape, np.ndarray]]]:
    n = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
    placed: List[Tuple[Shape, np.ndarray]] = []
    occupied = np.zeros((cfg.canvas, cfg.canvas), dtype=bool)
    for _ in range(n):
        for _ in range(cfg.place_retries):
            s = _sample_shape(rng, cfg.canvas)
            if any(bbox_iou(s.bbox, o.bbox) >= cfg.bbox_iou_max for o, _ in placed):
                continue
            m = shape_mask(s, cfg.canvas)
            if not m.any() or (m & occupied).any():
                continue
            placed.append((s, m))
            occupied |= m
            break
        else:
            return None
    return placed


def _pad_tokens(rng: np.random.Generator, tokens: List[str],
                cfg: SceneConfig) -> List[str]:
    if rng.random() < 0.3 and len(tokens) + 1 <= cfg.max_tokens:
        tokens = ["the"] + tokens
    if rng.random() < cfg.pad_prob:
        fits = [s for s in PAD_SUFFIXES if len(tokens) + len(s) <= cfg.max_tokens]
        if fits:
            tokens = tokens + list(fits[rng.integers(len(fits))])
    return tokens


def gen_sample(rng: np.random.Generator, cfg: SceneConfig) -> Sample:
    """One scene, one target, one unique expression; retries until valid."""
    cfg.validate()
    for _ in range(cfg.scene_retries):
        placed = _place_shapes(rng, cfg)
        if placed is None:
            continue
        shapes = [s for s, _ in placed]
        order = rng.permutation(len(shapes))
        for target in map(int, order):
            desc = describe_target(shapes, target, cfg.canvas)
            if desc is None:
                continue
            tokens = _pad_tokens(rng, description_tokens(desc), cfg)
            image = _render(rng, placed, cfg.canvas)
            return Sample(
                image=image,
                mask=placed[target][1].astype(np.uint8),
                expression=" ".join(tokens),
                meta={"canvas": cfg.canvas, "target": target,
                      "shapes": [s.to_meta() for s in shapes]},
            )
    raise RuntimeError(f"could not build a valid scene in {cfg.scene_retries} attempts")


def _render(rng: np.random.Generator, placed, canvas: int) -> np.ndarray:
    image = rng.uniform(0.25, 0.45, size=(3, canvas, canvas)).astype(np.float32)
    for shape, mask in placed:
        rgb = COLORS[shape.color]
        for c in range(3):
            ch = image[c]
            ch[mask] = rgb[c]
    return image


def gen_dataset(rng_seed: int, count: int, cfg: SceneConfig) -> List[Sample]:
    """Deterministic dataset: sample i uses a generator seeded by (seed, i)."""
    return [gen_sample(np.random.default_rng([rng_seed, i]), cfg)
            for i in range(count)]


# ---------------------------------------------------------------------------
# dataset files

MANIFEST = "manifest.jsonl"
_KNOWN_FIELDS = {"id", "expression", "image", "mask", "meta"}


def write_dataset(out_dir, samples: Sequence[Sample], viz: bool = False) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / MANIFEST
    if manifest.exists():
        manifest.unlink()
    for i, s in enumerate(samples):
        sid = f"{i:06d}"
        write_tensor_file(out / f"{sid}.image.rt", s.image.astype(np.float32))
        write_tensor_file(out / f"{sid}.mask.rt", s.mask.astype(np.float32))
        if viz:
            write_ppm(out / f"{sid}.ppm",
                      (np.clip(s.image, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0))
            write_pgm(out / f"{sid}.mask.pgm", to_gray(s.mask, 0.0, 1.0))
        append_jsonl(manifest, {"id": sid, "expression": s.expression,
                                "image": f"{sid}.image.rt", "mask": f"{sid}.mask.rt",
                                "meta": s.meta})


def read_dataset(in_dir) -> List[Sample]:
    src = Path(in_dir)
    manifest = src / MANIFEST
    if not manifest.exists():
        raise FileFormatError(f"{src}: no {MANIFEST}")
    samples = []
    for rec in read_jsonl(manifest):
        sid = rec.get("id", "<missing id>")
        unknown = set(rec) - _KNOWN_FIELDS
        if unknown:
            warnings.warn(f"sample {sid}: ignoring unknown manifest fields {sorted(unknown)}")
        try:
            image = read_tensor_file(src / rec["image"])
            mask = read_tensor_file(src / rec["mask"])
        except (FileNotFoundError, FileFormatError) as e:
            raise FileFormatError(f"sample {sid}: {e}") from None
        if image.ndim != 3 or image.shape[0] != 3:
            raise FileFormatError(f"sample {sid}: image shape {image.shape} is not [3,H,W]")
        if mask.shape != image.shape[1:]:
            raise FileFormatError(
                f"sample {sid}: mask shape {mask.shape} does not match image {image.shape[1:]}")
        samples.append(Sample(image=image.astype(np.float32),
                              mask=(mask > 0.5).astype(np.uint8),
                              expression=rec["expression"], meta=rec["meta"]))
    return samples
