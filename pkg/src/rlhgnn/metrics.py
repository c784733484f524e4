"""Classification metrics computed from a confusion matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def confusion_matrix(y_true, y_pred, labels=None) -> tuple[np.ndarray, np.ndarray]:
    """Rows are true classes, columns predicted classes.

    ``labels`` defaults to the sorted union of classes seen in either argument.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have the same length")
    if labels is None:
        labels = np.union1d(y_true, y_pred)
    labels = np.asarray(labels)
    index = {v: i for i, v in enumerate(labels.tolist())}
    cm = np.zeros((len(labels), len(labels)), dtype=np.int64)
    ti = np.array([index[v] for v in y_true.tolist()], dtype=np.int64)
    pi = np.array([index[v] for v in y_pred.tolist()], dtype=np.int64)
    np.add.at(cm, (ti, pi), 1)
    return cm, labels


def _check(cm):
    cm = np.asarray(cm, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    return cm


def _safe_div(num, den):
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def accuracy(cm) -> float:
    cm = _check(cm)
    total = cm.sum()
    return float(np.trace(cm) / total) if total > 0 else 0.0


def precision_recall(cm) -> tuple[np.ndarray, np.ndarray]:
    cm = _check(cm)
    tp = np.diag(cm)
    return _safe_div(tp, cm.sum(axis=0)), _safe_div(tp, cm.sum(axis=1))


def f1_per_class(cm) -> np.ndarray:
    p, r = precision_recall(cm)
    return _safe_div(2 * p * r, p + r)


def macro_f1(cm) -> float:
    """Unweighted mean of per-class F1; 0/0 counts as 0."""
    f1 = f1_per_class(cm)
    return float(f1.mean()) if f1.size else 0.0


def gmean_per_class(cm) -> np.ndarray:
    cm = _check(cm)
    tp = np.diag(cm)
    fn = cm.sum(axis=1) - tp
    fp = cm.sum(axis=0) - tp
    tn = cm.sum() - tp - fn - fp
    return np.sqrt(_safe_div(tp, tp + fn) * _safe_div(tn, tn + fp))


def gmean(cm) -> float:
    """Macro one-vs-rest mean of sqrt(sensitivity * specificity)."""
    g = gmean_per_class(cm)
    return float(g.mean()) if g.size else 0.0


@dataclass(frozen=True)
class ClassReport:
    label: object
    precision: float
    recall: float
    f1: float
    support: int
    undefined: bool  # no true and no predicted instances


def per_class_report(cm, labels) -> list[ClassReport]:
    cm = _check(cm)
    p, r = precision_recall(cm)
    f1 = f1_per_class(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    return [
        ClassReport(lab, float(p[i]), float(r[i]), float(f1[i]), int(support[i]), bool(support[i] == 0 and predicted[i] == 0))
        for i, lab in enumerate(labels)
    ]
