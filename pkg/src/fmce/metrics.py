"""Confusion matrix and macro-averaged classification metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray  # rows = true label, cols = predicted label
    averaging: str = "macro"

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "averaging": self.averaging,
            "confusion": self.confusion.tolist(),
        }


def confusion_matrix(true, pred, k: int) -> np.ndarray:
    """K x K counts for labels in 1..K."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape:
        raise ValueError("prediction and label vectors differ in length")
    for name, v in (("labels", true), ("predictions", pred)):
        if v.size and (v.min() < 1 or v.max() > k):
            raise ValueError(f"{name} must lie in 1..{k}")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (true - 1, pred - 1), 1)
    return cm


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def metrics_from_confusion(cm: np.ndarray) -> EvalMetrics:
    total = cm.sum()
    if total == 0:
        raise ValueError("cannot evaluate an empty test split")
    tp = np.diag(cm).astype(np.float64)
    # classes never predicted get precision 0
    precision = _safe_div(tp, cm.sum(axis=0))
    recall = _safe_div(tp, cm.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return EvalMetrics(
        accuracy=float(tp.sum() / total),
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        f1=float(f1.mean()),
        confusion=cm,
    )


def evaluate_predictions(true, pred, k: int) -> EvalMetrics:
    return metrics_from_confusion(confusion_matrix(true, pred, k))
