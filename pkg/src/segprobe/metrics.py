"""Confusion-matrix accumulation and mean intersection-over-union.

Pixels whose ground-truth value is the ignore index never enter the
confusion matrix. A class with empty union (absent from both ground truth
and predictions over the evaluated pixels) is excluded from the mean
rather than scored 0 or 1, matching the usual VOC-style convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, UndefinedMetricError


@dataclass
class MetricReport:
    """Running confusion matrix; rows are ground truth, columns predictions.

    Counts are int64 so dataset-scale accumulation cannot overflow. Reports
    merge by matrix addition (``+``), which is associative and commutative,
    so per-thread reports can be combined in any order.
    """

    confusion: np.ndarray = field(repr=False)

    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise InvalidArgumentError(f"num_classes must be >= 1, got {num_classes}")
        self.confusion = np.zeros((num_classes, num_classes), dtype=np.int64)

    @property
    def num_classes(self) -> int:
        return self.confusion.shape[0]

    @property
    def evaluated_pixels(self) -> int:
        return int(self.confusion.sum())

    def copy(self) -> "MetricReport":
        out = MetricReport(self.num_classes)
        out.confusion += self.confusion
        return out

    def __add__(self, other: "MetricReport") -> "MetricReport":
        if self.num_classes != other.num_classes:
            raise InvalidArgumentError("cannot merge reports with different class counts")
        out = self.copy()
        out.confusion += other.confusion
        return out

    def to_dict(self) -> dict:
        per_class, mean = miou(self)
        return {
            "num_classes": self.num_classes,
            "evaluated_pixels": self.evaluated_pixels,
            "confusion": self.confusion.tolist(),
            "per_class_iou": [None if v is None else float(v) for v in per_class],
            "miou": float(mean),
        }


def accumulate(report: MetricReport, pred: np.ndarray, gt) -> MetricReport:
    """Fold one image's prediction into ``report`` (updated in place).

    ``pred`` holds committed class indices in [0, num_classes); ``gt`` is a
    LabelMask (or a raw index array plus its ignore convention) whose ignore
    pixels are skipped.
    """
    gt_values = np.asarray(getattr(gt, "values", gt))
    ignore_index = getattr(gt, "ignore_index", 255)
    pred = np.asarray(pred)
    if pred.shape != gt_values.shape:
        raise InvalidArgumentError(
            f"prediction shape {pred.shape} != ground-truth shape {gt_values.shape}"
        )
    c = report.num_classes
    if pred.size and ((pred.min() < 0) or (pred.max() >= c)):
        bad = pred[(pred < 0) | (pred >= c)][0]
        raise InvalidArgumentError(
            f"prediction contains value {int(bad)} outside [0, {c}); "
            "predictions must be committed classes, never the ignore index"
        )
    valid = gt_values != ignore_index
    if np.any(valid):
        gt_valid = gt_values[valid].astype(np.int64)
        if gt_valid.max() >= c:
            raise InvalidArgumentError(
                f"ground truth contains class {int(gt_valid.max())} outside [0, {c})"
            )
        flat = gt_valid * c + pred[valid].astype(np.int64)
        report.confusion += np.bincount(flat, minlength=c * c).reshape(c, c)
    return report


def iou_per_class(report: MetricReport) -> list:
    """Per-class IoU; None where the class has empty union."""
    conf = report.confusion
    tp = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=1) + conf.sum(axis=0) - np.diag(conf)
    out = []
    for c in range(report.num_classes):
        out.append(float(tp[c] / union[c]) if union[c] > 0 else None)
    return out


def miou(report: MetricReport) -> tuple:
    """(per_class_iou, miou). Raises if the report has no evaluated pixels."""
    if report.evaluated_pixels < 1:
        raise UndefinedMetricError("no evaluated pixels; mIoU is undefined")
    per_class = iou_per_class(report)
    present = [v for v in per_class if v is not None]
    return per_class, float(np.mean(present))


def miou_between(pred, gt, num_classes: int) -> float:
    """mIoU of a single predicted mask against a single ground-truth mask."""
    report = MetricReport(num_classes)
    accumulate(report, pred, gt)
    return miou(report)[1]
