"""Confusion-matrix based evaluation metrics for the five sleep stages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import N_CLASSES
from .errors import InputError


@dataclass
class Metrics:
    confusion: np.ndarray  # [5,5] int, rows = true, cols = predicted
    accuracy: float
    per_class_f1: list[float]
    macro_f1: float
    absent_classes: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class_f1": self.per_class_f1,
            "confusion": self.confusion.tolist(),
            "absent_classes": self.absent_classes,
        }


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    y_true = np.asarray(y_true).reshape(-1)
    y_pred = np.asarray(y_pred).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise InputError("y_true and y_pred must have the same length")
    if y_true.size and (y_true.min() < 0 or y_true.max() >= n_classes):
        raise InputError("true labels out of range")
    if y_pred.size and (y_pred.min() < 0 or y_pred.max() >= n_classes):
        raise InputError("predicted labels out of range")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def compute_metrics(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int = N_CLASSES) -> Metrics:
    cm = confusion_matrix(y_true, y_pred, n_classes)
    total = cm.sum()
    accuracy = float(np.trace(cm) / total) if total else 0.0
    f1 = []
    absent = []
    for c in range(n_classes):
        tp = cm[c, c]
        row = cm[c].sum()  # support
        col = cm[:, c].sum()  # predictions
        if row == 0 and col == 0:
            absent.append(c)
            f1.append(0.0)
            continue
        precision = tp / col if col else 0.0
        recall = tp / row if row else 0.0
        denom = precision + recall
        f1.append(float(2 * precision * recall / denom) if denom else 0.0)
    return Metrics(cm, accuracy, f1, float(np.mean(f1)), absent)
