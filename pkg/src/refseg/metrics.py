"""Segmentation metrics: IoU, precision at IoU thresholds, length buckets.

Conventions: IoU of two empty masks is 1.0 (nothing to find, nothing
predicted); exactly one empty mask gives 0.0. Precision@X counts strict
inequality, iou > X. Reports additionally bucket mean IoU by expression
length over the fixed ranges [1-5], [6-7], [8-10], [11-20].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

PREC_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)
LENGTH_BUCKETS = ((1, 5), (6, 7), (8, 10), (11, 20))


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union of two binary masks."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"iou: mask shapes {pred.shape} and {gt.shape} differ")
    p = pred.astype(bool)
    g = gt.astype(bool)
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def prec_at(ious: Sequence[float], threshold: float) -> float:
    """Fraction of samples with IoU strictly above the threshold."""
    if len(ious) == 0:
        raise ValueError("prec_at: empty IoU list")
    arr = np.asarray(ious, dtype=np.float64)
    return float((arr > threshold).mean())


def bucket_for_length(length: int) -> int:
    """Index of the length bucket containing `length`, or -1 if none."""
    for i, (lo, hi) in enumerate(LENGTH_BUCKETS):
        if lo <= length <= hi:
            return i
    return -1


@dataclass
class MetricReport:
    """Aggregate over an evaluation set."""

    mean_iou: float
    precision: Dict[float, float]                  # threshold -> fraction
    bucket_iou: List[float] = field(default_factory=list)   # mean IoU per bucket (nan if empty)
    bucket_count: List[int] = field(default_factory=list)
    count: int = 0

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean_iou": self.mean_iou,
            "precision": {f"{t:.1f}": v for t, v in sorted(self.precision.items())},
            "buckets": [
                {"range": list(LENGTH_BUCKETS[i]), "count": self.bucket_count[i],
                 "mean_iou": None if self.bucket_count[i] == 0 else self.bucket_iou[i]}
                for i in range(len(LENGTH_BUCKETS))
            ],
        }

    def table(self) -> str:
        lines = [f"samples        {self.count}",
                 f"mean IoU       {self.mean_iou:.4f}"]
        for t in sorted(self.precision):
            lines.append(f"Prec@{t:.1f}       {self.precision[t]:.4f}")
        for i, (lo, hi) in enumerate(LENGTH_BUCKETS):
            val = "-" if self.bucket_count[i] == 0 else f"{self.bucket_iou[i]:.4f}"
            lines.append(f"IoU len {lo:2d}-{hi:<2d}  {val}  (n={self.bucket_count[i]})")
        return "\n".join(lines)


def build_report(ious: Sequence[float], lengths: Sequence[int]) -> MetricReport:
    """Assemble the report from per-sample IoUs and expression lengths."""
    if len(ious) != len(lengths):
        raise ValueError(f"build_report: {len(ious)} IoUs vs {len(lengths)} lengths")
    if len(ious) == 0:
        raise ValueError("build_report: empty evaluation set")
    arr = np.asarray(ious, dtype=np.float64)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("build_report: IoU outside [0, 1]")
    precision = {t: prec_at(ious, t) for t in PREC_THRESHOLDS}
    sums = [0.0] * len(LENGTH_BUCKETS)
    counts = [0] * len(LENGTH_BUCKETS)
    for v, length in zip(ious, lengths):
        b = bucket_for_length(length)
        if b >= 0:
            sums[b] += v
            counts[b] += 1
    bucket_iou = [sums[i] / counts[i] if counts[i] else float("nan")
                  for i in range(len(LENGTH_BUCKETS))]
    return MetricReport(mean_iou=float(arr.mean()), precision=precision,
                        bucket_iou=bucket_iou, bucket_count=counts, count=len(ious))
