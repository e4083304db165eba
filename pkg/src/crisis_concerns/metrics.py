"""Classification metrics: confusion matrix, precision, recall, F1.

A zero denominator yields a metric of 0 rather than NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


def safe_div(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


def precision(tp: float, fp: float) -> float:
    return safe_div(tp, tp + fp)


def recall(tp: float, fn: float) -> float:
    return safe_div(tp, tp + fn)


def f1_score(p: float, r: float) -> float:
    """Harmonic mean of precision and recall."""
    return safe_div(2.0 * p * r, p + r)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    flat = y_true * n_classes + y_pred
    return np.bincount(flat, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


@dataclass
class EvalReport:
    classes: list
    confusion: np.ndarray
    precision: list
    recall: list
    f1: list
    support: list
    accuracy: float
    oob_accuracy: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.confusion.sum())

    @property
    def macro_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def macro_recall(self) -> float:
        return float(np.mean(self.recall))

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))

    def counts(self, k: int):
        """(TP, FP, FN, TN) for class index ``k``."""
        cm = self.confusion
        tp = int(cm[k, k])
        fp = int(cm[:, k].sum() - tp)
        fn = int(cm[k, :].sum() - tp)
        return tp, fp, fn, int(cm.sum() - tp - fp - fn)

    def micro_f1(self) -> float:
        tp = fp = fn = 0
        for k in range(len(self.classes)):
            a, b, c, _ = self.counts(k)
            tp, fp, fn = tp + a, fp + b, fn + c
        return f1_score(precision(tp, fp), recall(tp, fn))

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "confusion": self.confusion.tolist(),
            "precision": list(self.precision),
            "recall": list(self.recall),
            "f1": list(self.f1),
            "support": list(self.support),
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "oob_accuracy": self.oob_accuracy,
        }


def evaluate_predictions(y_true, y_pred, classes: Sequence, oob_accuracy=None) -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    if y_true.size == 0:
        raise ValueError("evaluation split is empty")
    cm = confusion_matrix(y_true, y_pred, len(classes))
    prec, rec, f1s, sup = [], [], [], []
    for k in range(len(classes)):
        tp = cm[k, k]
        p = precision(tp, cm[:, k].sum() - tp)
        r = recall(tp, cm[k, :].sum() - tp)
        prec.append(p)
        rec.append(r)
        f1s.append(f1_score(p, r))
        sup.append(int(cm[k, :].sum()))
    return EvalReport(
        classes=list(classes),
        confusion=cm,
        precision=prec,
        recall=rec,
        f1=f1s,
        support=sup,
        accuracy=safe_div(np.trace(cm), cm.sum()),
        oob_accuracy=oob_accuracy,
    )
