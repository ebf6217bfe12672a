"""Classification metrics, inter-rater agreement and significance testing.

Metrics with a zero denominator are reported as absent (None) rather than 0
so that aggregates over folds are not silently deflated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class EmptyMatrix(ValueError):
    """A confusion matrix with no samples has no metrics."""


class OneClassOnly(ValueError):
    """ROC analysis needs both classes present."""


class LengthMismatch(ValueError):
    """Paired vectors must have equal lengths."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """Binary confusion counts with an explicitly declared positive class."""

    tp: int
    fp: int
    tn: int
    fn: int
    positive_label: int = 1

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(
        cls, y_true: Sequence[int], y_pred: Sequence[int], positive_label: int = 1
    ) -> "ConfusionMatrix":
        t = np.asarray(y_true)
        p = np.asarray(y_pred)
        if t.shape != p.shape:
            raise LengthMismatch(f"{t.shape} vs {p.shape}")
        pos = t == positive_label
        pred_pos = p == positive_label
        return cls(
            tp=int(np.sum(pos & pred_pos)),
            fp=int(np.sum(~pos & pred_pos)),
            tn=int(np.sum(~pos & ~pred_pos)),
            fn=int(np.sum(pos & ~pred_pos)),
            positive_label=positive_label,
        )


@dataclass(frozen=True)
class EvalReport:
    """Full metric set for one task on one split; values in [0, 1] or absent."""

    task: str
    n: int
    sensitivity: float | None
    specificity: float | None
    ppv: float | None
    npv: float | None
    ba: float | None
    f1: float | None
    mcc: float | None
    auc: float | None = None  # rank-based (Mann-Whitney), from scores
    auc_hard: float | None = None  # BA of the argmax decision

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "n": self.n,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "ppv": self.ppv,
            "npv": self.npv,
            "ba": self.ba,
            "f1": self.f1,
            "mcc": self.mcc,
            "auc_rank": self.auc,
            "auc_hard": self.auc_hard,
        }


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def classification_metrics(cm: ConfusionMatrix, task: str = "") -> EvalReport:
    """Sensitivity/specificity/PPV/NPV plus BA, F1 and MCC from a confusion matrix."""
    if cm.total == 0:
        raise EmptyMatrix("no samples")
    sens = _ratio(cm.tp, cm.tp + cm.fn)
    spec = _ratio(cm.tn, cm.tn + cm.fp)
    ppv = _ratio(cm.tp, cm.tp + cm.fp)
    npv = _ratio(cm.tn, cm.tn + cm.fn)
    ba = None if sens is None or spec is None else (sens + spec) / 2.0
    f1 = None
    if ppv is not None and sens is not None and (ppv + sens) > 0:
        f1 = 2.0 * ppv * sens / (ppv + sens)
    mcc = None
    denom = (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    if denom > 0:
        mcc = (cm.tp * cm.tn - cm.fp * cm.fn) / math.sqrt(denom)
    return EvalReport(
        task=task, n=cm.total, sensitivity=sens, specificity=spec, ppv=ppv, npv=npv,
        ba=ba, f1=f1, mcc=mcc,
    )


def balanced_accuracy(y_true: Sequence[int], y_pred: Sequence[int]) -> float:
    """Macro-averaged recall over the classes present in the truth vector."""
    t = np.asarray(y_true)
    p = np.asarray(y_pred)
    if t.shape != p.shape:
        raise LengthMismatch(f"{t.shape} vs {p.shape}")
    recalls = []
    for cls in np.unique(t):
        mask = t == cls
        recalls.append(float(np.mean(p[mask] == cls)))
    return float(np.mean(recalls))


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Rank-based (Mann-Whitney) AUC; tied scores contribute one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise LengthMismatch(f"{s.shape} vs {y.shape}")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly(f"need both classes, got {n_pos} positive / {n_neg} negative")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum_pos = float(np.sum(ranks[y == 1]))
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def hard_decision_auc(y_true: Sequence[int], y_pred: Sequence[int]) -> float:
    """AUC computed from hard argmax decisions; numerically equal to BA."""
    return balanced_accuracy(y_true, y_pred)


def weighted_cohens_kappa(
    rater1: Sequence[int],
    rater2: Sequence[int],
    n_categories: int | None = None,
    weighting: str = "linear",
) -> float:
    """Weighted Cohen's kappa on a k-level ordinal scale.

    Disagreement weights are |i-j|/(k-1), squared for ``weighting='quadratic'``.
    When the chance-expected disagreement is zero (both raters stuck to one
    category) the observed disagreement is necessarily zero too and kappa is
    defined as 1.
    """
    r1 = np.asarray(rater1, dtype=np.int64)
    r2 = np.asarray(rater2, dtype=np.int64)
    if r1.shape != r2.shape:
        raise LengthMismatch(f"{r1.shape} vs {r2.shape}")
    if r1.size < 2:
        raise ValueError("kappa needs at least two rated items")
    if weighting not in ("linear", "quadratic"):
        raise ValueError(f"weighting must be linear or quadratic, got {weighting!r}")
    k = int(n_categories) if n_categories is not None else int(max(r1.max(), r2.max())) + 1
    if k < 2:
        k = 2
    if r1.min() < 0 or r2.min() < 0 or r1.max() >= k or r2.max() >= k:
        raise ValueError(f"ratings must lie in [0, {k})")

    observed = np.zeros((k, k), dtype=np.float64)
    for a, b in zip(r1, r2):
        observed[a, b] += 1.0
    observed /= r1.size
    p1 = observed.sum(axis=1)
    p2 = observed.sum(axis=0)
    expected = np.outer(p1, p2)

    i, j = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    weights = np.abs(i - j) / (k - 1)
    if weighting == "quadratic":
        weights = weights**2

    expected_disagreement = float(np.sum(weights * expected))
    observed_disagreement = float(np.sum(weights * observed))
    if expected_disagreement == 0.0:
        return 1.0
    return 1.0 - observed_disagreement / expected_disagreement


def annotator_ba(
    rater1: Sequence[int], rater2: Sequence[int], consensus: Sequence[int]
) -> float:
    """Mean of each rater's balanced accuracy against the consensus labels."""
    r1 = np.asarray(rater1)
    r2 = np.asarray(rater2)
    c = np.asarray(consensus)
    if not (r1.shape == r2.shape == c.shape):
        raise LengthMismatch(f"{r1.shape}, {r2.shape}, {c.shape}")
    return 0.5 * (balanced_accuracy(c, r1) + balanced_accuracy(c, r2))


def _chi2_sf_1df(x: float) -> float:
    # survival function of chi-squared with one degree of freedom
    return math.erfc(math.sqrt(x / 2.0))


EXACT_MCNEMAR_THRESHOLD = 10


def mcnemar_test(
    preds_a: Sequence[int], preds_b: Sequence[int], truth: Sequence[int]
) -> tuple[float, float]:
    """McNemar's test on the discordant pairs of two classifiers.

    Uses the continuity-corrected chi-squared statistic; with fewer than 10
    discordant pairs the chi-squared approximation is unusable, so the exact
    two-sided binomial test takes over (the statistic is then min(b, c)).
    With no discordant pairs at all, p = 1 by convention.
    """
    a = np.asarray(preds_a)
    b = np.asarray(preds_b)
    t = np.asarray(truth)
    if not (a.shape == b.shape == t.shape):
        raise LengthMismatch(f"{a.shape}, {b.shape}, {t.shape}")
    a_correct = a == t
    b_correct = b == t
    n_ab = int(np.sum(a_correct & ~b_correct))
    n_ba = int(np.sum(~a_correct & b_correct))
    n = n_ab + n_ba
    if n == 0:
        return 0.0, 1.0
    if n < EXACT_MCNEMAR_THRESHOLD:
        k = min(n_ab, n_ba)
        p = 2.0 * sum(math.comb(n, i) for i in range(k + 1)) / 2.0**n
        return float(k), min(1.0, p)
    statistic = (abs(n_ab - n_ba) - 1.0) ** 2 / n
    return statistic, _chi2_sf_1df(statistic)


def mean_std_reports(reports: Sequence[EvalReport]) -> dict:
    """Aggregate fold reports into mean and empirical std per defined metric."""
    keys = ("sensitivity", "specificity", "ppv", "npv", "ba", "f1", "mcc", "auc", "auc_hard")
    out: dict = {"task": reports[0].task if reports else "", "n_folds": len(reports)}
    for key in keys:
        values = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        if values:
            out[key] = {"mean": float(np.mean(values)), "std": float(np.std(values))}
        else:
            out[key] = None
    return out


def format_report_table(aggregates: Sequence[dict]) -> str:
    """Aligned plain-text table of aggregated metrics, one column per task."""
    rows = ("ba", "f1", "mcc", "auc", "auc_hard", "sensitivity", "specificity", "ppv", "npv")
    labels = {
        "ba": "BA", "f1": "F1 score", "mcc": "MCC", "auc": "AUC (rank)",
        "auc_hard": "AUC (hard)", "sensitivity": "Sensitivity",
        "specificity": "Specificity", "ppv": "PPV", "npv": "NPV",
    }
    header = ["Metric"] + [agg["task"] for agg in aggregates]
    lines = []
    for key in rows:
        cells = [labels[key]]
        for agg in aggregates:
            stat = agg.get(key)
            if stat is None:
                cells.append("--")
            else:
                cells.append(f"{100 * stat['mean']:.2f} +/- {100 * stat['std']:.2f}")
        lines.append(cells)
    widths = [max(len(r[c]) for r in [header] + lines) for c in range(len(header))]
    def fmt(cells: list[str]) -> str:
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths))
    return "\n".join([fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in lines])
