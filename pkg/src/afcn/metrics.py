"""Confusion matrix and the two accuracy figures: weighted (overall) and
unweighted (mean per-class recall)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import CLASS_NAMES
from .errors import MetricError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [K, K], rows = true class, columns = predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion(preds, labels, num_classes: int = 4) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError(f"{preds.size} predictions vs {labels.size} labels")
    if preds.size and (min(preds.min(), labels.min()) < 0
                       or max(preds.max(), labels.max()) >= num_classes):
        raise ValueError(f"class index outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def weighted_accuracy(m: ConfusionMatrix) -> float:
    if m.total == 0:
        raise MetricError("weighted accuracy undefined for an empty confusion matrix")
    return float(np.trace(m.counts) / m.total)


def per_class_recall(m: ConfusionMatrix) -> np.ndarray:
    """Recall per class; NaN where the class has no support."""
    support = m.counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(support > 0, np.diag(m.counts) / support, np.nan)


def unweighted_accuracy(m: ConfusionMatrix) -> float:
    # zero-support classes are left out of the mean
    recall = per_class_recall(m)
    present = ~np.isnan(recall)
    if not present.any():
        raise MetricError("unweighted accuracy undefined: no class has support")
    return float(recall[present].mean())


def write_metrics_csv(path, rows: list[dict]) -> None:
    """Rows carry ``fold``, ``wa``, ``ua`` and ``recall_<class>`` keys."""
    names = CLASS_NAMES
    header = ["fold", "wa", "ua"] + [f"recall_{n}" for n in names]
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k, "")) for k in header})


def metrics_row(fold, m: ConfusionMatrix) -> dict:
    row = {"fold": fold, "wa": weighted_accuracy(m), "ua": unweighted_accuracy(m)}
    for name, r in zip(CLASS_NAMES, per_class_recall(m)):
        row[f"recall_{name}"] = r
    return row


def write_confusion_csv(path, m: ConfusionMatrix) -> None:
    k = m.counts.shape[0]
    names = list(CLASS_NAMES[:k]) if k <= len(CLASS_NAMES) else [str(i) for i in range(k)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + names)
        for name, row in zip(names, m.counts):
            w.writerow([name] + [int(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        return "" if np.isnan(v) else f"{v:.6f}"
    return v
