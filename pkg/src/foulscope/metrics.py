"""Ranking metrics: average precision, PR curves, threshold selection, SLoF bins."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoPositives, NoPredictedPositives, OutOfRange, UnreachableRecall
from .validation import check_scores_labels

# Lower edges of the SLoF 1 (1-15 %) and SLoF 2 (16-100 %) coverage bands.
SLOF_EDGES = (0.01, 0.16)


def average_precision(scores, labels) -> float:
    """Non-interpolated average precision.

    Items are ranked by descending score with ties kept in input order; the
    result is the mean, over positive items, of the precision at that item's
    rank.

    >>> average_precision([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
    0.8333333333333333
    """
    s, y = check_scores_labels(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("average precision needs at least one positive label")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    tp = np.cumsum(hits)
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(tp[hits] / ranks))


@dataclass(frozen=True, eq=False)
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    positives: int
    negatives: int

    def __len__(self):
        return self.thresholds.shape[0]


def pr_curve(scores, labels) -> PRCurve:
    """One (precision, recall) point per distinct score, predicting ``score >= threshold``."""
    s, y = check_scores_labels(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("a PR curve needs at least one positive label")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    tp = np.cumsum(y[order])
    # last index of each block of equal scores
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    predicted = last + 1
    tp_at = tp[last]
    return PRCurve(thresholds=s_sorted[last], precision=tp_at / predicted, recall=tp_at / n_pos,
                   positives=n_pos, negatives=int(y.size - n_pos))


@dataclass(frozen=True)
class ThresholdSelection:
    threshold: float
    precision: float
    recall: float


def select_threshold(curve: PRCurve, target_recall: float = 0.9) -> ThresholdSelection:
    """Largest threshold whose recall reaches ``target_recall``."""
    if not target_recall > 0:
        raise ValueError(f"target_recall must be > 0, got {target_recall}")
    if target_recall > 1:
        raise UnreachableRecall(f"target recall {target_recall} exceeds 1")
    i = int(np.argmax(curve.recall >= target_recall))
    return ThresholdSelection(threshold=float(curve.thresholds[i]),
                              precision=float(curve.precision[i]), recall=float(curve.recall[i]))


def slof_from_coverage(coverage: float) -> int:
    """Map a fouled-area fraction to the 0/1/2 Simplified Level of Fouling rank."""
    c = float(coverage)
    if math.isnan(c) or not 0.0 <= c <= 1.0:
        raise OutOfRange(f"coverage must lie in [0, 1], got {coverage!r}")
    if c < SLOF_EDGES[0]:
        return 0
    if c < SLOF_EDGES[1]:
        return 1
    return 2


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def precision(self) -> float:
        if self.tp + self.fp == 0:
            raise NoPredictedPositives("no item scored at or above the threshold")
        return self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float:
        if self.tp + self.fn == 0:
            raise NoPositives("recall is undefined without positive labels")
        return self.tp / (self.tp + self.fn)


def confusion_at(scores, labels, threshold: float) -> Confusion:
    s, y = check_scores_labels(scores, labels)
    pred = s >= threshold
    return Confusion(tp=int(np.sum(pred & y)), fp=int(np.sum(pred & ~y)),
                     tn=int(np.sum(~pred & ~y)), fn=int(np.sum(~pred & y)))


@dataclass(frozen=True)
class EvalReport:
    average_precision: float
    target_recall: float
    selected_threshold: float
    precision_at: float
    recall_at: float
    n_items: int
    positives: int
    negatives: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def evaluate(scores, labels, target_recall: float = 0.9) -> tuple[EvalReport, PRCurve]:
    ap = average_precision(scores, labels)
    curve = pr_curve(scores, labels)
    sel = select_threshold(curve, target_recall)
    report = EvalReport(average_precision=ap, target_recall=float(target_recall),
                        selected_threshold=sel.threshold, precision_at=sel.precision,
                        recall_at=sel.recall, n_items=curve.positives + curve.negatives,
                        positives=curve.positives, negatives=curve.negatives)
    return report, curve
