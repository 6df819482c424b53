"""Accuracy, per-class precision/recall/F1, confusion matrices, and
one-vs-rest ROC curves swept over a fixed threshold grid.

Conventions: confusion rows are true classes, columns predictions;
displayed matrices are row percentages rounded to one decimal; ROC uses
101 evenly spaced thresholds in [0, 1] with (0,0) and (1,1) forced onto
every curve; micro-averaging pools the (sample, class) decisions of all
classes present in the labels, macro-averaging means the per-class rates
at each threshold.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, LabelError

DEFAULT_THRESHOLDS = np.linspace(0.0, 1.0, 101)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    class_names: tuple

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = self.counts.shape[0]
        if self.counts.ndim != 2 or self.counts.shape != (k, k):
            raise InvalidInputError(f"confusion counts must be square, got {self.counts.shape}")
        if np.any(self.counts < 0):
            raise InvalidInputError("confusion counts must be non-negative")
        if not self.class_names:
            self.class_names = tuple(str(i) for i in range(k))
        if len(self.class_names) != k:
            raise InvalidInputError(f"{len(self.class_names)} names for {k} classes")

    @property
    def num_classes(self):
        return self.counts.shape[0]


def confusion_matrix(predictions, labels, num_classes, class_names=()):
    """counts[i, j] = number of samples with true class i predicted as j."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise InvalidInputError("predictions and labels must be equal-length 1-D sequences")
    for name, arr in (("prediction", predictions), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise LabelError(f"{name} index out of range [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    return ConfusionMatrix(counts, tuple(class_names))


def row_percent(matrix):
    """Counts as row percentages (full precision; display rounds to one decimal)."""
    counts = matrix.counts
    rowsums = counts.sum(axis=1)
    zero = np.flatnonzero(rowsums == 0)
    if zero.size:
        raise InvalidInputError(
            f"row percentage undefined for class(es) with no samples: "
            f"{[matrix.class_names[i] for i in zero]}"
        )
    return counts * 100.0 / rowsums[:, None]


def precision_recall_f1(matrix):
    """Per-class precision/recall/F1 (0 where undefined) plus overall accuracy."""
    counts = matrix.counts
    if counts.size == 0:
        raise InvalidInputError("empty confusion matrix")
    total = counts.sum()
    if total == 0:
        raise InvalidInputError("confusion matrix holds no samples")
    diag = np.diag(counts).astype(np.float64)
    colsum = counts.sum(axis=0).astype(np.float64)
    rowsum = counts.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(colsum > 0, diag / colsum, 0.0)
        recall = np.where(rowsum > 0, diag / rowsum, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "accuracy": float(diag.sum() / total),
    }


@dataclass
class RocCurve:
    """Per-class and averaged (threshold, FPR, TPR) sequences with AUCs.

    ``per_class[c]`` is an array of rows (threshold, fpr, tpr) sorted by
    threshold; classes absent from the labels appear in ``undefined``
    and are excluded from both averages.
    """

    per_class: dict
    micro: np.ndarray
    macro: np.ndarray
    auc_per_class: dict
    micro_auc: float
    macro_auc: float
    undefined: list = field(default_factory=list)


def _rates_to_points(thresholds, fpr, tpr):
    points = np.column_stack([thresholds, fpr, tpr])
    if not (points[-1, 1] == 0.0 and points[-1, 2] == 0.0):
        points = np.vstack([points, [np.inf, 0.0, 0.0]])
    return points


def auc(points):
    """Trapezoidal area under (FPR, TPR) points sorted by FPR (ties by TPR)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 2:
        raise InvalidInputError(f"need an Nx2 point array with N >= 2, got {points.shape}")
    fpr, tpr = points[:, 0], points[:, 1]
    if np.any(np.diff(fpr) < 0):
        raise InvalidInputError("points must be sorted by FPR ascending")
    ties = np.diff(fpr) == 0
    if np.any(ties & (np.diff(tpr) < 0)):
        raise InvalidInputError("FPR ties must be sorted by TPR ascending")
    return float(np.trapezoid(tpr, fpr))


def _curve_auc(points):
    # Sweep order is threshold-ascending, so reversing gives FPR-ascending.
    rev = points[::-1, 1:]
    return auc(rev)


def roc_sweep(scores, labels, thresholds=None):
    """One-vs-rest ROC over a shared threshold grid.

    At threshold t class c is predicted positive iff scores[:, c] >= t.
    Returns per-class curves plus micro (pooled decisions) and macro
    (mean of per-class rates at each threshold) averages, each with a
    trapezoidal AUC.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise InvalidInputError(f"scores {scores.shape} do not match {labels.shape[0]} labels")
    if not np.allclose(scores.sum(axis=1), 1.0, atol=1e-5):
        raise InvalidInputError("score rows must sum to 1")
    k = scores.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"label index out of range [0, {k})")
    thresholds = DEFAULT_THRESHOLDS if thresholds is None else np.asarray(thresholds, dtype=np.float64)

    per_class = {}
    auc_per_class = {}
    undefined = []
    rate_stack = []
    micro_tp = np.zeros(len(thresholds))
    micro_fp = np.zeros(len(thresholds))
    micro_pos = 0
    micro_neg = 0
    for c in range(k):
        positive = labels == c
        p = int(positive.sum())
        n_neg = int(labels.size - p)
        if p == 0 or n_neg == 0:
            undefined.append(c)
            warnings.warn(f"class {c} has no {'positives' if p == 0 else 'negatives'}; "
                          f"curve undefined, excluded from averages")
            continue
        predicted = scores[:, c][None, :] >= thresholds[:, None]
        tp = (predicted & positive[None, :]).sum(axis=1).astype(np.float64)
        fp = (predicted & ~positive[None, :]).sum(axis=1).astype(np.float64)
        tpr = tp / p
        fpr = fp / n_neg
        per_class[c] = _rates_to_points(thresholds, fpr, tpr)
        auc_per_class[c] = _curve_auc(per_class[c])
        rate_stack.append((fpr, tpr))
        micro_tp += tp
        micro_fp += fp
        micro_pos += p
        micro_neg += n_neg

    if not per_class:
        raise InvalidInputError("no class has both positives and negatives; ROC undefined")
    micro = _rates_to_points(thresholds, micro_fp / micro_neg, micro_tp / micro_pos)
    macro_fpr = np.mean([r[0] for r in rate_stack], axis=0)
    macro_tpr = np.mean([r[1] for r in rate_stack], axis=0)
    macro = _rates_to_points(thresholds, macro_fpr, macro_tpr)
    return RocCurve(
        per_class=per_class,
        micro=micro,
        macro=macro,
        auc_per_class=auc_per_class,
        micro_auc=_curve_auc(micro),
        macro_auc=_curve_auc(macro),
        undefined=undefined,
    )


# --------------------------------------------------------------------------
# exports
# --------------------------------------------------------------------------

def confusion_to_csv(matrix):
    """Row-percent CSV, one decimal: K labeled data rows, then a label row."""
    pct = row_percent(matrix)
    lines = []
    for name, row in zip(matrix.class_names, pct):
        lines.append(",".join([name] + [f"{v:.1f}" for v in row]))
    lines.append("," + ",".join(matrix.class_names))
    return "\n".join(lines) + "\n"


def roc_to_csv(curve, class_names=()):
    """Long-form curve CSV: class,threshold,fpr,tpr with micro/macro pseudo-classes."""
    def label(c):
        return class_names[c] if c < len(class_names) else str(c)

    lines = ["class,threshold,fpr,tpr"]
    for c in sorted(curve.per_class):
        for t, fpr, tpr in curve.per_class[c]:
            lines.append(f"{label(c)},{t!r},{fpr!r},{tpr!r}")
    for name, points in (("micro", curve.micro), ("macro", curve.macro)):
        for t, fpr, tpr in points:
            lines.append(f"{name},{t!r},{fpr!r},{tpr!r}")
    return "\n".join(lines) + "\n"


def metrics_to_dict(matrix, curve=None):
    """Full-precision JSON-ready summary of a confusion matrix (+ optional ROC)."""
    stats = precision_recall_f1(matrix)
    out = {
        "accuracy": stats["accuracy"],
        "confusion_counts": matrix.counts.tolist(),
        "class_names": list(matrix.class_names),
        "per_class": {
            name: {
                "precision": float(stats["precision"][i]),
                "recall": float(stats["recall"][i]),
                "f1": float(stats["f1"][i]),
            }
            for i, name in enumerate(matrix.class_names)
        },
    }
    if curve is not None:
        out["auc"] = {
            "per_class": {
                matrix.class_names[c] if c < len(matrix.class_names) else str(c): v
                for c, v in sorted(curve.auc_per_class.items())
            },
            "micro": curve.micro_auc,
            "macro": curve.macro_auc,
        }
    return out
