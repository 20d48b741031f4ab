"""Binary-classification metrics and the multi-run stability summary.

AUC is computed two independent ways on purpose: the rank statistic
(:func:`auc`) is the reference, and the trapezoidal area under
:func:`roc_points` must agree with it to 1e-10 — a cheap cross check that
both are right.  Ties get midrank credit in both paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import stats


class MetricError(ValueError):
    """Inputs make the requested metric undefined."""


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class PRF1:
    precision: float
    recall: float
    f1: float
    degenerate: bool  # some denominator was zero and the value was forced to 0


@dataclass(frozen=True)
class MetricsReport:
    threshold: float
    confusion: Confusion
    precision: float
    recall: float
    f1: float
    auc: float
    roc: tuple  # ((fpr, tpr), ...) monotone from (0,0) to (1,1)
    degenerate: bool


@dataclass(frozen=True)
class RobustnessSummary:
    values: tuple
    mean: float
    lower: float
    upper: float

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _check_binary(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty label vector")
    uniq = np.unique(labels)
    if not np.isin(uniq, (0, 1)).all():
        raise ValueError(f"labels must be 0/1, got {uniq}")
    return labels.astype(np.int64)


def confusion(scores, labels, threshold: float = 0.5) -> Confusion:
    """Counts with the convention score >= threshold -> predicted positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} vs labels {labels.shape}")
    pred = scores >= threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    return Confusion(tp=tp, fp=fp, tn=tn, fn=fn)


def prf1(counts: Confusion) -> PRF1:
    """Precision/recall/F1; zero denominators yield 0 with the flag set."""
    degenerate = False
    if counts.tp + counts.fp > 0:
        precision = counts.tp / (counts.tp + counts.fp)
    else:
        precision, degenerate = 0.0, True
    if counts.tp + counts.fn > 0:
        recall = counts.tp / (counts.tp + counts.fn)
    else:
        recall, degenerate = 0.0, True
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1, degenerate = 0.0, True
    return PRF1(precision=precision, recall=recall, f1=f1, degenerate=degenerate)


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # 1-based midrank
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    """Rank-based AUC: P(random positive outranks random negative), ties 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("auc needs both classes present")
    ranks = _midranks(scores)
    rank_sum = ranks[labels == 1].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """ROC polyline from (0,0) to (1,1), one vertex per distinct score."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("roc needs both classes present")
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        tp += int(sorted_labels[i:j + 1].sum())
        fp += (j - i + 1) - int(sorted_labels[i:j + 1].sum())
        points.append((fp / n_neg, tp / n_pos))
        i = j + 1
    return points


def trapezoid_area(points) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def evaluate(scores, labels, threshold: float = 0.5) -> MetricsReport:
    counts = confusion(scores, labels, threshold)
    p = prf1(counts)
    points = roc_points(scores, labels)
    return MetricsReport(
        threshold=threshold,
        confusion=counts,
        precision=p.precision,
        recall=p.recall,
        f1=p.f1,
        auc=auc(scores, labels),
        roc=tuple(points),
        degenerate=p.degenerate,
    )


def robustness_summary(values, confidence: float = 0.95) -> RobustnessSummary:
    """Student-t confidence interval over repeated-run values (k >= 2)."""
    vals = tuple(float(v) for v in values)
    k = len(vals)
    if k < 2:
        raise ValueError(f"robustness summary needs at least 2 runs, got {k}")
    mean = float(np.mean(vals))
    sd = float(np.std(vals, ddof=1))
    t = float(stats.t.ppf(0.5 + confidence / 2.0, k - 1))
    half = t * sd / np.sqrt(k)
    return RobustnessSummary(values=vals, mean=mean, lower=mean - half, upper=mean + half)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def report_to_dict(report: MetricsReport) -> dict:
    return {
        "threshold": report.threshold,
        "confusion": {"tp": report.confusion.tp, "fp": report.confusion.fp,
                      "tn": report.confusion.tn, "fn": report.confusion.fn},
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "auc": report.auc,
        "degenerate": report.degenerate,
        "roc": [[x, y] for x, y in report.roc],
    }


def report_from_dict(d: dict) -> MetricsReport:
    c = d["confusion"]
    return MetricsReport(
        threshold=d["threshold"],
        confusion=Confusion(tp=c["tp"], fp=c["fp"], tn=c["tn"], fn=c["fn"]),
        precision=d["precision"],
        recall=d["recall"],
        f1=d["f1"],
        auc=d["auc"],
        roc=tuple((x, y) for x, y in d["roc"]),
        degenerate=d["degenerate"],
    )


def save_report(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_report(path) -> MetricsReport:
    with open(path, encoding="utf-8") as fh:
        return report_from_dict(json.load(fh))


def save_roc_csv(report: MetricsReport, path) -> None:
    """Two-column fpr,tpr CSV for external plotting."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fpr,tpr\n")
        for x, y in report.roc:
            fh.write(f"{x!r},{y!r}\n")
