"""Confusion-matrix evaluation: mIoU, precision, recall, F1 and overall accuracy.

Cloud is the positive class.  Metrics are micro-averaged: predictions are
counted into one dataset-wide confusion matrix and every ratio is computed
from those four totals.  mIoU averages the IoU of the cloud and clear
classes.  Ratios with a zero denominator are reported as 0.0 and flagged
via ``degenerate`` so CSV output stays numeric.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Mask
from .errors import DimensionError, EmptyEvaluationError


@dataclass(frozen=True)
class ConfusionMatrix:
    """Pixel counts with cloud as the positive class."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
        )


@dataclass(frozen=True)
class MetricsReport:
    """The five reported columns, each in [0, 1] (display scale is x100)."""

    miou: float
    precision: float
    recall: float
    f1: float
    oa: float
    iou_cloud: float
    iou_clear: float
    degenerate: bool


def accumulate(cm: ConfusionMatrix, pred: Mask, truth: Mask) -> ConfusionMatrix:
    """Count one predicted/true mask pair into the matrix.

    Returns a new matrix; accumulation is associative, so patch-by-patch
    accumulation equals counting over the concatenated masks.
    """
    if pred.values.shape != truth.values.shape:
        raise DimensionError(
            f"pred shape {pred.values.shape} != truth shape {truth.values.shape}"
        )
    p = pred.values != 0
    t = truth.values != 0
    return cm.merge(ConfusionMatrix(
        tp=int(np.count_nonzero(p & t)),
        fp=int(np.count_nonzero(p & ~t)),
        fn=int(np.count_nonzero(~p & t)),
        tn=int(np.count_nonzero(~p & ~t)),
    ))


def _ratio(num: int, den: int) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def report(cm: ConfusionMatrix) -> MetricsReport:
    """Reduce a confusion matrix to the five reported metrics."""
    if cm.total == 0:
        raise EmptyEvaluationError("cannot report metrics over zero pixels")
    precision, d1 = _ratio(cm.tp, cm.tp + cm.fp)
    recall, d2 = _ratio(cm.tp, cm.tp + cm.fn)
    if precision + recall > 0.0:
        f1, d3 = 2.0 * precision * recall / (precision + recall), False
    else:
        f1, d3 = 0.0, True
    oa = (cm.tp + cm.tn) / cm.total
    iou_cloud, d4 = _ratio(cm.tp, cm.tp + cm.fp + cm.fn)
    iou_clear, d5 = _ratio(cm.tn, cm.tn + cm.fn + cm.fp)
    miou = 0.5 * (iou_cloud + iou_clear)
    return MetricsReport(
        miou=miou,
        precision=precision,
        recall=recall,
        f1=f1,
        oa=oa,
        iou_cloud=iou_cloud,
        iou_clear=iou_clear,
        degenerate=d1 or d2 or d3 or d4 or d5,
    )


EVAL_CSV_HEADER = "split,patches,tp,fp,fn,tn,miou,precision,recall,f1,oa"


def eval_csv_row(split: str, patches: int, cm: ConfusionMatrix, rep: MetricsReport) -> str:
    """One evaluation CSV line; metrics on the x100 scale with 4 decimals."""
    cells = [split, str(patches), str(cm.tp), str(cm.fp), str(cm.fn), str(cm.tn)]
    for value in (rep.miou, rep.precision, rep.recall, rep.f1, rep.oa):
        cells.append(f"{100.0 * value:.4f}")
    return ",".join(cells)
