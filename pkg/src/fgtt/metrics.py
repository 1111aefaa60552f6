"""Per-class and support-weighted classification metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .schema import CLASSES


@dataclass
class Metrics:
    confusion: np.ndarray  # rows true, columns predicted
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float

    @property
    def class_accuracy(self) -> np.ndarray:
        """Row-normalised confusion diagonal, which equals per-class recall."""
        return self.recall

    def row_percentages(self) -> np.ndarray:
        rows = self.confusion.sum(axis=1, keepdims=True)
        return np.divide(100.0 * self.confusion, rows, out=np.zeros_like(self.confusion, dtype=float),
                         where=rows > 0)

    def report(self, class_names=CLASSES) -> str:
        """Comma-separated table: per-class rows, weighted average, row-normalised confusion (%)."""
        names = list(class_names)
        pct = self.row_percentages()
        lines = ["label,acc,prec,rec,f1," + ",".join(names)]
        for i, name in enumerate(names):
            cells = [f"{100 * self.recall[i]:.1f}%", f"{self.precision[i]:.3f}", f"{self.recall[i]:.3f}",
                     f"{self.f1[i]:.3f}"] + [f"{p:.1f}%" for p in pct[i]]
            lines.append(",".join([name] + cells))
        lines.append(",".join(["Weighted Avg", f"{100 * self.accuracy:.1f}%", f"{self.weighted_precision:.3f}",
                               f"{self.weighted_recall:.3f}", f"{self.weighted_f1:.3f}"] + ["--"] * len(names)))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "support": self.support.tolist(),
            "accuracy": self.accuracy,
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "weighted_f1": self.weighted_f1,
        }


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def metrics_from_confusion(confusion) -> Metrics:
    """Metrics of a (possibly fractional, e.g. expected) confusion matrix."""
    conf = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(conf)
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    total = conf.sum()
    if total <= 0:
        raise ContractError("confusion matrix is empty")
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, support)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    w = support / total
    return Metrics(
        confusion=conf,
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        accuracy=float(tp.sum() / total),
        weighted_precision=float(w @ precision),
        weighted_recall=float(w @ recall),
        weighted_f1=float(w @ f1),
    )


def confusion_matrix(predicted, actual, n_classes: int = 3) -> np.ndarray:
    predicted = np.asarray(predicted, dtype=np.int64)
    actual = np.asarray(actual, dtype=np.int64)
    if predicted.shape != actual.shape:
        raise ContractError(f"predicted has {predicted.shape} entries, actual has {actual.shape}")
    if predicted.size == 0:
        raise ContractError("cannot compute metrics on empty input")
    for arr in (predicted, actual):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ContractError(f"class ids must lie in [0, {n_classes})")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (actual, predicted), 1)
    return conf


def compute_metrics(predicted, actual, n_classes: int = 3) -> Metrics:
    m = metrics_from_confusion(confusion_matrix(predicted, actual, n_classes))
    m.confusion = m.confusion.astype(np.int64)
    return m
