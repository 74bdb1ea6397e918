"""Classification metrics from a confusion matrix.

Rows are true classes, columns predictions. Per-class precision, recall, and
F1 come from one-vs-rest counts; zero-denominator cases score 0.0 and are
flagged as degenerate but still enter the macro averages.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, LabelOutOfRange, LengthMismatch


def confusion_matrix(y_true, y_pred, num_classes=None) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise LengthMismatch(
            f"need matching 1-D label arrays, got {y_true.shape} and {y_pred.shape}")
    if y_true.size == 0:
        raise EmptyInput("no labels to score")
    if num_classes is None:
        num_classes = int(max(y_true.max(), y_pred.max())) + 1
    for name, labels in (("true", y_true), ("predicted", y_pred)):
        if labels.min() < 0 or labels.max() >= num_classes:
            bad = labels[(labels < 0) | (labels >= num_classes)][0]
            raise LabelOutOfRange(f"{name} label {bad} outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def class_counts(cm, label):
    """One-vs-rest tp/fp/fn/tn for one class."""
    cm = np.asarray(cm)
    tp = int(cm[label, label])
    fn = int(cm[label].sum() - tp)
    fp = int(cm[:, label].sum() - tp)
    tn = int(cm.sum() - tp - fn - fp)
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn}


def _safe_ratio(num, den):
    if den == 0:
        return 0.0, True
    return num / den, False


@dataclass
class ClassMetrics:
    label: int
    support: int
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    degenerate: bool

    def to_dict(self):
        return {"label": self.label, "support": self.support, "tp": self.tp,
                "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "degenerate": self.degenerate}


@dataclass
class MetricsReport:
    accuracy: float
    per_class: list
    macro_precision: float
    macro_recall: float
    macro_f1: float
    n_samples: int

    def to_dict(self):
        return {"accuracy": self.accuracy,
                "macro_precision": self.macro_precision,
                "macro_recall": self.macro_recall,
                "macro_f1": self.macro_f1,
                "n_samples": self.n_samples,
                "per_class": [c.to_dict() for c in self.per_class]}

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def table(self):
        lines = [f"{'class':>7} {'support':>8} {'precision':>10} {'recall':>8} {'f1':>8}"]
        for c in self.per_class:
            mark = " *" if c.degenerate else ""
            lines.append(f"{c.label:>7d} {c.support:>8d} {c.precision:>10.4f} "
                         f"{c.recall:>8.4f} {c.f1:>8.4f}{mark}")
        lines.append(f"{'macro':>7} {self.n_samples:>8d} {self.macro_precision:>10.4f} "
                     f"{self.macro_recall:>8.4f} {self.macro_f1:>8.4f}")
        lines.append(f"accuracy {self.accuracy:.4f}")
        if any(c.degenerate for c in self.per_class):
            lines.append("* zero-denominator ratios reported as 0.0")
        return "\n".join(lines)


def report(cm) -> MetricsReport:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] == 0:
        raise LengthMismatch(f"confusion matrix must be square, got {cm.shape}")
    total = int(cm.sum())
    if total == 0:
        raise EmptyInput("confusion matrix is empty")
    per_class = []
    for label in range(cm.shape[0]):
        counts = class_counts(cm, label)
        precision, p_bad = _safe_ratio(counts["tp"], counts["tp"] + counts["fp"])
        recall, r_bad = _safe_ratio(counts["tp"], counts["tp"] + counts["fn"])
        f1, f_bad = _safe_ratio(2.0 * precision * recall, precision + recall)
        per_class.append(ClassMetrics(
            label=label, support=int(cm[label].sum()), degenerate=p_bad or r_bad or f_bad,
            precision=precision, recall=recall, f1=f1, **counts))
    return MetricsReport(
        accuracy=float(np.trace(cm)) / total,
        per_class=per_class,
        macro_precision=float(np.mean([c.precision for c in per_class])),
        macro_recall=float(np.mean([c.recall for c in per_class])),
        macro_f1=float(np.mean([c.f1 for c in per_class])),
        n_samples=total)


def write_confusion_csv(cm, path):
    cm = np.asarray(cm)
    k = cm.shape[0]
    with open(path, "w", newline="") as fh:
        fh.write("true\\pred," + ",".join(f"pred_{j}" for j in range(k)) + "\n")
        for i in range(k):
            fh.write(f"true_{i}," + ",".join(str(int(v)) for v in cm[i]) + "\n")
