"""Confusion matrix and the classification report: per-class
precision/recall/F1/support, accuracy, macro and weighted averages."""

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import LabelError


def predict_labels(outputs, head, threshold=0.5):
    """Argmax per row (first index on ties) for multiclass; p >= threshold
    maps to class 1 for binary."""
    outputs = np.asarray(outputs, dtype=np.float64)
    if head == "binary":
        return (outputs.reshape(-1) >= threshold).astype(np.int64)
    return np.argmax(outputs, axis=1).astype(np.int64)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray      # (C, C); rows true, columns predicted
    class_names: list = None

    @property
    def total(self):
        return int(self.counts.sum())


def confusion(y_true, y_pred, n_classes, class_names=None):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    for name, arr in (("true", y_true), ("predicted", y_pred)):
        bad = np.flatnonzero((arr < 0) | (arr >= n_classes))
        if bad.size:
            raise LabelError(
                f"{name} label {int(arr[bad[0]])} out of range [0, {n_classes}) "
                f"at index {int(bad[0])}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts=counts, class_names=class_names)


@dataclass
class ClassificationReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    macro: dict
    weighted: dict
    class_names: list = None
    undefined: list = field(default_factory=list)  # (class index, metric) pairs


def report(cm):
    """Per-class metrics with the zero-division convention: an undefined
    precision or recall is reported as 0 and flagged; every class in the
    mapping counts toward the macro average."""
    counts = cm.counts.astype(np.float64)
    n_classes = counts.shape[0]
    total = counts.sum()
    tp = np.diag(counts)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    precision = np.zeros(n_classes)
    recall = np.zeros(n_classes)
    f1 = np.zeros(n_classes)
    undefined = []
    for c in range(n_classes):
        if predicted[c] > 0:
            precision[c] = tp[c] / predicted[c]
        else:
            undefined.append((c, "precision"))
        if support[c] > 0:
            recall[c] = tp[c] / support[c]
        else:
            undefined.append((c, "recall"))
        if precision[c] + recall[c] > 0:
            f1[c] = 2.0 * precision[c] * recall[c] / (precision[c] + recall[c])
    accuracy = float(tp.sum() / total)
    macro = {"precision": float(precision.mean()),
             "recall": float(recall.mean()),
             "f1": float(f1.mean())}
    weighted = {"precision": float((support * precision).sum() / total),
                "recall": float((support * recall).sum() / total),
                "f1": float((support * f1).sum() / total)}
    return ClassificationReport(
        precision=precision, recall=recall, f1=f1,
        support=support.astype(np.int64), accuracy=accuracy,
        macro=macro, weighted=weighted, class_names=cm.class_names,
        undefined=undefined)


def report_dict(rep):
    """Full-precision machine form of a report."""
    names = rep.class_names or [str(i) for i in range(len(rep.precision))]
    return {
        "classes": [
            {"class": names[c],
             "precision": float(rep.precision[c]),
             "recall": float(rep.recall[c]),
             "f1": float(rep.f1[c]),
             "support": int(rep.support[c])}
            for c in range(len(names))
        ],
        "accuracy": rep.accuracy,
        "macro_avg": rep.macro,
        "weighted_avg": rep.weighted,
        "total": int(rep.support.sum()),
        "undefined": [{"class": names[c], "metric": m} for c, m in rep.undefined],
    }


def format_report(rep):
    """Fixed-width human-readable table, four decimal places."""
    names = rep.class_names or [str(i) for i in range(len(rep.precision))]
    width = max(len(n) for n in names + ["Weighted Average"]) + 2
    out = io.StringIO()
    out.write(f"{'':<{width}}{'Precision':>10}{'Recall':>10}{'F1-Score':>10}{'Support':>10}\n")
    for c, name in enumerate(names):
        out.write(f"{name:<{width}}{rep.precision[c]:>10.4f}{rep.recall[c]:>10.4f}"
                  f"{rep.f1[c]:>10.4f}{rep.support[c]:>10d}\n")
    total = int(rep.support.sum())
    out.write(f"{'Accuracy':<{width}}{rep.accuracy:>10.4f}{'':>10}{'':>10}{total:>10d}\n")
    out.write(f"{'Macro Average':<{width}}{rep.macro['precision']:>10.4f}"
              f"{rep.macro['recall']:>10.4f}{rep.macro['f1']:>10.4f}{total:>10d}\n")
    out.write(f"{'Weighted Average':<{width}}{rep.weighted['precision']:>10.4f}"
              f"{rep.weighted['recall']:>10.4f}{rep.weighted['f1']:>10.4f}{total:>10d}\n")
    if rep.undefined:
        flagged = ", ".join(f"{names[c]}/{m}" for c, m in rep.undefined)
        out.write(f"(zero-division reported as 0 for: {flagged})\n")
    return out.getvalue()


def confusion_csv(cm):
    """CSV with class names as header row and leading column."""
    names = cm.class_names or [str(i) for i in range(cm.counts.shape[0])]
    lines = ["," + ",".join(names)]
    for c, name in enumerate(names):
        lines.append(name + "," + ",".join(str(int(v)) for v in cm.counts[c]))
    return "\n".join(lines) + "\n"
