"""Segmentation quality: confusion accumulation, per-class IoU, mIoU, PA.

The confusion matrix is a mergeable monoid, so workers can accumulate
locally and combine in any order. Metrics are computed from a dataset-global
matrix; rounding for display happens only in the reporting layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pngio import IGNORE, N_CLASSES, validate_label_values

# Predictions of 255 against valid ground truth land in a dedicated overflow
# column: they count as false negatives for the gt class but never as true
# positives or as false positives for any class.
_OVERFLOW = N_CLASSES
_WIDTH = N_CLASSES + 1


class ConfusionMatrix:
    """19x(19+1) pixel counts; rows = ground-truth class, cols = prediction."""

    __slots__ = ("counts",)

    def __init__(self, counts: np.ndarray | None = None):
        if counts is None:
            counts = np.zeros((N_CLASSES, _WIDTH), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (N_CLASSES, _WIDTH):
            raise ValueError(f"expected ({N_CLASSES}, {_WIDTH}) counts, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion counts must be non-negative")
        self.counts = counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def copy(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts.copy())

    def accumulate(self, pred, gt) -> "ConfusionMatrix":
        """Add one (prediction, ground truth) pair; gt-ignore pixels are skipped."""
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
        validate_label_values(gt, "ground truth")
        validate_label_values(pred, "prediction")
        valid = gt != IGNORE
        g = gt[valid].astype(np.int64)
        p = pred[valid].astype(np.int64)
        p[p == IGNORE] = _OVERFLOW
        flat = np.bincount(g * _WIDTH + p, minlength=N_CLASSES * _WIDTH)
        self.counts += flat.reshape(N_CLASSES, _WIDTH)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        self.counts += other.counts
        return self


def per_class_iou(cm: ConfusionMatrix) -> list[float | None]:
    """IoU_c = TP/(TP+FP+FN); None when the class never occurs on either side."""
    c = cm.counts
    ious: list[float | None] = []
    for cls in range(N_CLASSES):
        tp = int(c[cls, cls])
        fn = int(c[cls].sum()) - tp
        fp = int(c[:, cls].sum()) - tp
        denom = tp + fp + fn
        ious.append(None if denom == 0 else tp / denom)
    return ious


def miou(ious: list[float | None]) -> float:
    """Mean over defined class IoUs; absent classes are excluded, not zeroed."""
    defined = [v for v in ious if v is not None]
    if not defined:
        raise ValueError("empty evaluation: no class has a defined IoU")
    return sum(defined) / len(defined)


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise ValueError("empty confusion matrix")
    correct = int(np.trace(cm.counts[:, :N_CLASSES]))
    return correct / total


def delta_q(q_clean: float, q_deg: float) -> float:
    """Quality drop clean minus degraded; negative when degradation helps."""
    for name, v in (("q_clean", q_clean), ("q_deg", q_deg)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    return q_clean - q_deg


@dataclass(frozen=True)
class SegQuality:
    per_class_iou: tuple[float | None, ...]
    miou: float
    pixel_accuracy: float


def evaluate(cm: ConfusionMatrix) -> SegQuality:
    ious = per_class_iou(cm)
    return SegQuality(tuple(ious), miou(ious), pixel_accuracy(cm))
