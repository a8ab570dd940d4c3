"""Segmentation evaluation metrics and pseudo-label quality analytics.

A metric with a zero denominator is reported as NaN ("undefined") and
excluded from aggregates; the report keeps a count of exclusions. Test-set
evaluation sums confusion counts over all images before computing ratios
(micro averaging); macro averaging is available as an option.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .model import predict_probs

FOREGROUND_THRESHOLD = 0.5  # probabilities strictly above count as foreground


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp,
            self.tn + other.tn, self.fn + other.fn,
        )


def confusion(pred_mask: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Exact pixel counts of a binary prediction against ground truth."""
    pred_mask = np.asarray(pred_mask).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred_mask.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred_mask.shape} vs {gt.shape}")
    return ConfusionCounts(
        tp=int(np.sum(pred_mask & gt)),
        fp=int(np.sum(pred_mask & ~gt)),
        tn=int(np.sum(~pred_mask & ~gt)),
        fn=int(np.sum(~pred_mask & gt)),
    )


def _ratio(num: int, den: int) -> float:
    if den == 0:
        return math.nan
    return 100.0 * num / den


def iou_foreground(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp + c.fn)


def iou_background(c: ConfusionCounts) -> float:
    return _ratio(c.tn, c.tn + c.fn + c.fp)


def miou(c: ConfusionCounts) -> float:
    """Mean of foreground and background IoU; undefined classes are skipped."""
    parts = [v for v in (iou_foreground(c), iou_background(c)) if not math.isnan(v)]
    if not parts:
        return math.nan
    return sum(parts) / len(parts)


def pixel_accuracy(c: ConfusionCounts) -> float:
    return _ratio(c.tp + c.tn, c.total)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)


def dice(c: ConfusionCounts) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


_METRIC_FUNCS = {
    "miou": miou,
    "pa": pixel_accuracy,
    "recall": recall,
    "precision": precision,
    "dice": dice,
}


@dataclass
class MetricsReport:
    """The five standard metrics (percent) plus pseudo-label analytics."""

    miou: float = math.nan
    pa: float = math.nan
    recall: float = math.nan
    precision: float = math.nan
    dice: float = math.nan
    n_images: int = 0
    n_undefined: dict = field(default_factory=dict)
    pseudo_point_containment: float = None
    pseudo_miou: float = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def report_from_counts(c: ConfusionCounts, n_images: int = 1) -> MetricsReport:
    rep = MetricsReport(n_images=n_images)
    undef = {}
    for name, fn in _METRIC_FUNCS.items():
        v = fn(c)
        setattr(rep, name, v)
        if math.isnan(v):
            undef[name] = 1
    rep.n_undefined = undef
    return rep


def point_containment(pseudo_probs: np.ndarray, points) -> int:
    """1 iff every annotated point lands on thresholded foreground."""
    probs = np.asarray(pseudo_probs)
    for r, c in points.points:
        if not probs[r, c] > FOREGROUND_THRESHOLD:
            return 0
    return 1


def containment_fraction(pseudo_probs_list, points_list) -> float:
    if not pseudo_probs_list:
        return math.nan
    hits = [point_containment(p, pts) for p, pts in zip(pseudo_probs_list, points_list)]
    return float(np.mean(hits))


def evaluate_masks(pred_masks, gt_masks, average: str = "micro") -> MetricsReport:
    """Metrics over aligned lists of binary prediction/ground-truth masks."""
    if len(pred_masks) != len(gt_masks):
        raise ValueError("prediction/ground-truth count mismatch")
    if not pred_masks:
        raise ValueError("empty evaluation set")
    counts = [confusion(p, g) for p, g in zip(pred_masks, gt_masks)]
    if average == "micro":
        agg = ConfusionCounts()
        for c in counts:
            agg = agg + c
        return report_from_counts(agg, n_images=len(counts))
    if average == "macro":
        rep = MetricsReport(n_images=len(counts))
        undef = {}
        for name, fn in _METRIC_FUNCS.items():
            vals = [fn(c) for c in counts]
            defined = [v for v in vals if not math.isnan(v)]
            skipped = len(vals) - len(defined)
            setattr(rep, name, sum(defined) / len(defined) if defined else math.nan)
            if skipped:
                undef[name] = skipped
        rep.n_undefined = undef
        return rep
    raise ValueError(f"unknown averaging mode {average!r}")


def evaluate(model, test_samples, average: str = "micro", params=None,
             batch_size: int = 16) -> MetricsReport:
    """Run the model over a test set with ground-truth masks and score it.

    ``params`` optionally loads a flat parameter vector into the model
    before evaluation.
    """
    if not test_samples:
        raise ValueError("empty test set")
    for s in test_samples:
        if s.mask is None:
            raise ValueError(f"test sample {s.id} has no ground-truth mask")
    if params is not None:
        model.load_parameter_vector(params)
    probs = predict_probs(model, [s.image for s in test_samples], batch_size=batch_size)
    preds = [p > FOREGROUND_THRESHOLD for p in probs]
    gts = [s.mask.values.astype(bool) for s in test_samples]
    return evaluate_masks(preds, gts, average=average)
