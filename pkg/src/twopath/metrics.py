"""Confusion-matrix metrics. Rows are ground truth, columns are predictions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int], classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.intp)
    y_pred = np.asarray(y_pred, dtype=np.intp)
    if y_true.shape != y_pred.shape:
        raise ValueError("truth and prediction lists differ in length")
    cm = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _check(cm) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {cm.shape}")
    if (cm < 0).any():
        raise ValueError("confusion matrix counts must be non-negative")
    return cm


def precision_per_class(cm) -> np.ndarray:
    """TP / (TP + FP) per class, i.e. diagonal over column sums; 0 for never-predicted classes."""
    cm = _check(cm).astype(np.float64)
    col = cm.sum(axis=0)
    diag = np.diag(cm)
    return np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)


def overall_accuracy(cm) -> float:
    cm = _check(cm)
    total = cm.sum()
    if total <= 0:
        raise ValueError("overall accuracy of an empty confusion matrix")
    return float(np.trace(cm) / total)


def kappa(cm) -> float:
    """Cohen's kappa (p_o - p_e) / (1 - p_e); 0 when p_e == 1."""
    cm = _check(cm).astype(np.float64)
    total = cm.sum()
    if total <= 0:
        raise ValueError("kappa of an empty confusion matrix")
    p_o = np.trace(cm) / total
    p_e = float((cm.sum(axis=1) * cm.sum(axis=0)).sum() / total**2)
    if p_e == 1.0:
        return 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def normalize_rows(cm) -> np.ndarray:
    cm = _check(cm).astype(np.float64)
    rows = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, rows, out=np.zeros_like(cm), where=rows > 0)


@dataclass
class EvalReport:
    class_names: List[str]
    precision: np.ndarray
    oa: float
    kappa: float
    normalized: np.ndarray
    counts: Optional[np.ndarray] = None

    @classmethod
    def from_confusion(cls, cm, class_names: Optional[Sequence[str]] = None) -> "EvalReport":
        cm = _check(cm)
        names = list(class_names) if class_names else [str(i) for i in range(cm.shape[0])]
        return cls(names, precision_per_class(cm), overall_accuracy(cm), kappa(cm), normalize_rows(cm), cm)

    @classmethod
    def from_predictions(cls, y_true, y_pred, classes: int, class_names=None) -> "EvalReport":
        return cls.from_confusion(confusion_matrix(y_true, y_pred, classes), class_names)

    def to_text(self) -> str:
        lines = [f"{name},{float(p)!r}" for name, p in zip(self.class_names, self.precision)]
        lines.append(f"OA,{self.oa!r}")
        lines.append(f"kappa,{self.kappa!r}")
        lines += [",".join(repr(float(v)) for v in row) for row in self.normalized]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        oa_at = next(i for i, ln in enumerate(lines) if ln.startswith("OA,"))
        names, prec = [], []
        for ln in lines[:oa_at]:
            name, _, value = ln.rpartition(",")
            names.append(name)
            prec.append(float(value))
        oa = float(lines[oa_at].split(",", 1)[1])
        kap = float(lines[oa_at + 1].split(",", 1)[1])
        rows = [[float(v) for v in ln.split(",")] for ln in lines[oa_at + 2:]]
        return cls(names, np.asarray(prec), oa, kap, np.asarray(rows))
