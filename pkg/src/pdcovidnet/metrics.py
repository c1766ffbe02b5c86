"""Confusion matrices, class-wise/weighted scores, Wald intervals and ROC/AUC."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, ShapeError


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray
    class_names: list[str]

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.counts).copy()

    @property
    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp

    @property
    def tn(self) -> np.ndarray:
        return self.total - self.tp - self.fp - self.fn

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\pred", *self.class_names])
            for name, row in zip(self.class_names, self.counts):
                w.writerow([name, *row.tolist()])


def confusion(true_labels: Sequence[int], predicted_labels: Sequence[int], k: int,
              class_names: Optional[Sequence[str]] = None) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ShapeError("label lists must be 1-D and of equal length")
    if t.size and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= k):
        raise DomainError(f"labels must lie in [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    names = list(class_names) if class_names is not None else [str(i) for i in range(k)]
    return ConfusionMatrix(counts, names)


@dataclass
class ClassScores:
    name: str
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: tuple[str, ...] = ()


@dataclass
class MetricsReport:
    classes: list[ClassScores]
    accuracy: float
    total: int


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


def class_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class precision/recall/F1 and overall accuracy.

    Undefined ratios (zero denominators) are reported as 0 and listed in
    ``ClassScores.degenerate``.
    """
    if cm.total == 0:
        raise DomainError("confusion matrix is empty")
    scores = []
    for c in range(cm.k):
        tp, fp, fn = int(cm.tp[c]), int(cm.fp[c]), int(cm.fn[c])
        precision, bad_p = _ratio(tp, tp + fp)
        recall, bad_r = _ratio(tp, tp + fn)
        f1, bad_f = _ratio(2 * precision * recall, precision + recall)
        flags = tuple(n for n, bad in (("precision", bad_p), ("recall", bad_r), ("f1", bad_f)) if bad)
        scores.append(ClassScores(cm.class_names[c], precision, recall, f1, int(cm.support[c]), flags))
    return MetricsReport(scores, float(cm.tp.sum()) / cm.total, cm.total)


def weighted_average(per_class: Sequence[ClassScores], supports: Optional[Sequence[float]] = None) -> dict:
    w = np.asarray([c.support for c in per_class] if supports is None else supports, dtype=float)
    if (w < 0).any() or w.sum() <= 0:
        raise DomainError("supports must be non-negative with a positive total")
    w = w / w.sum()
    return {
        key: float(sum(wi * getattr(c, key) for wi, c in zip(w, per_class)))
        for key in ("precision", "recall", "f1")
    }


def _z(level: float) -> float:
    # conventional two-decimal quantile at 95%
    return 1.96 if level == 0.95 else NormalDist().inv_cdf(0.5 + level / 2)


def wald_halfwidth(p: float, n: int, level: float = 0.95) -> float:
    return _z(level) * math.sqrt(p * (1.0 - p) / n)


def wald_ci(p: float, n: int, level: float = 0.95) -> tuple[float, float]:
    """Normal-approximation interval ``p +/- z*sqrt(p(1-p)/n)`` clamped to [0, 1]."""
    if not 0.0 <= p <= 1.0 or n < 1:
        raise DomainError(f"need 0 <= p <= 1 and n >= 1, got p={p}, n={n}")
    h = wald_halfwidth(p, n, level)
    return max(0.0, p - h), min(1.0, p + h)


# -- ROC ---------------------------------------------------------------------------


def roc_points(positive: np.ndarray, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Threshold sweep over distinct scores (plus +inf) for one binary problem."""
    positive = np.asarray(positive, dtype=bool)
    scores = np.asarray(scores, dtype=float)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], positive[order]
    # last index of each run of tied scores
    cut = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tps = np.cumsum(y)[cut]
    fps = np.cumsum(~y)[cut]
    n_pos, n_neg = y.sum(), (~y).sum()
    tpr = np.r_[0.0, tps / n_pos] if n_pos else np.r_[0.0, np.zeros(cut.size)]
    fpr = np.r_[0.0, fps / n_neg] if n_neg else np.r_[0.0, np.zeros(cut.size)]
    return fpr, tpr


def trapezoid_auc(fpr: np.ndarray, tpr: np.ndarray) -> float:
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass
class RocCurve:
    fpr: dict = field(default_factory=dict)  # key: class index or "micro"
    tpr: dict = field(default_factory=dict)
    auc: dict = field(default_factory=dict)  # class index, "micro", "macro"
    undefined: list[int] = field(default_factory=list)

    def to_csv(self, path, class_names: Optional[Sequence[str]] = None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["curve", "fpr", "tpr"])
            for key in self.fpr:
                label = class_names[key] if class_names is not None and isinstance(key, int) else key
                for x, y in zip(self.fpr[key], self.tpr[key]):
                    w.writerow([label, repr(float(x)), repr(float(y))])


def roc_auc(true_labels: Sequence[int], class_scores: np.ndarray) -> RocCurve:
    """One-vs-rest ROC per class, micro average over pooled decisions, macro mean of class AUCs.

    A class with no positive (or no negative) samples has an undefined AUC;
    it is listed in ``undefined`` and left out of the macro average.
    """
    t = np.asarray(true_labels, dtype=np.int64)
    s = np.asarray(class_scores, dtype=float)
    if s.ndim != 2 or s.shape[0] != t.size:
        raise ShapeError("class_scores must be N x K with N equal to the label count")
    k = s.shape[1]
    if t.size and (t.min() < 0 or t.max() >= k):
        raise DomainError(f"labels must lie in [0, {k})")
    onehot = t[:, None] == np.arange(k)[None, :]
    curve = RocCurve()
    for c in range(k):
        fpr, tpr = roc_points(onehot[:, c], s[:, c])
        curve.fpr[c], curve.tpr[c] = fpr, tpr
        n_pos = int(onehot[:, c].sum())
        if n_pos == 0 or n_pos == t.size:
            curve.undefined.append(c)
            curve.auc[c] = float("nan")
        else:
            curve.auc[c] = trapezoid_auc(fpr, tpr)
    fpr, tpr = roc_points(onehot.ravel(), s.ravel())
    curve.fpr["micro"], curve.tpr["micro"] = fpr, tpr
    curve.auc["micro"] = trapezoid_auc(fpr, tpr)
    defined = [curve.auc[c] for c in range(k) if c not in curve.undefined]
    curve.auc["macro"] = float(np.mean(defined)) if defined else float("nan")
    return curve


# -- reporting ---------------------------------------------------------------------


def write_metrics_csv(path, report: MetricsReport, level: float = 0.95):
    """One row per class, a weighted-average row and an accuracy row.

    ``*_ci`` columns hold Wald half-widths over ``n = total`` samples.
    """
    weighted = weighted_average(report.classes)
    n = report.total
    lo, hi = wald_ci(report.accuracy, n, level)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "support", "precision", "recall", "f1", "precision_ci", "recall_ci",
                    "accuracy", "ci_lower", "ci_upper", "degenerate"])
        for c in report.classes:
            w.writerow([c.name, c.support, f"{c.precision:.6f}", f"{c.recall:.6f}", f"{c.f1:.6f}",
                        "", "", "", "", "", ";".join(c.degenerate)])
        w.writerow(["weighted", n, f"{weighted['precision']:.6f}", f"{weighted['recall']:.6f}",
                    f"{weighted['f1']:.6f}", f"{wald_halfwidth(weighted['precision'], n, level):.6f}",
                    f"{wald_halfwidth(weighted['recall'], n, level):.6f}", "", "", "", ""])
        w.writerow(["accuracy", n, "", "", "", "", "", f"{report.accuracy:.6f}", f"{lo:.6f}", f"{hi:.6f}", ""])


def format_report(report: MetricsReport, cm: ConfusionMatrix, roc: Optional[RocCurve] = None) -> str:
    width = max(len(c.name) for c in report.classes) + 2
    lines = [f"{'class':<{width}}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>9}"]
    for c in report.classes:
        lines.append(f"{c.name:<{width}}{100 * c.precision:>10.2f}{100 * c.recall:>10.2f}"
                     f"{100 * c.f1:>10.2f}{c.support:>9d}")
    wa = weighted_average(report.classes)
    n = report.total
    lines.append(f"{'weighted':<{width}}{100 * wa['precision']:>10.2f}{100 * wa['recall']:>10.2f}"
                 f"{100 * wa['f1']:>10.2f}{n:>9d}")
    lo, hi = wald_ci(report.accuracy, n)
    lines.append(f"accuracy {100 * report.accuracy:.2f} [{100 * lo:.2f}, {100 * hi:.2f}]")
    lines.append("confusion (rows true, cols predicted):")
    for name, row in zip(cm.class_names, cm.counts):
        lines.append(f"  {name:<{width}}" + " ".join(f"{v:>5d}" for v in row))
    if roc is not None:
        aucs = ", ".join(
            f"{cm.class_names[k] if isinstance(k, int) else k}={v:.4f}" for k, v in roc.auc.items()
        )
        lines.append(f"AUC: {aucs}")
    return "\n".join(lines)
