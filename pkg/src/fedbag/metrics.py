"""Evaluation statistics for classification and survival models."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import gammaincc
from scipy.stats import norm, rankdata
from sklearn.metrics import average_precision_score, confusion_matrix

# keeps pair-matrix memory bounded in c_index
_CINDEX_BLOCK = 2048


class DegenerateInputError(ValueError):
    """The statistic is undefined for this input (e.g. a single class)."""


# --------------------------------------------------------------------------
# ROC / DeLong


def _binary_inputs(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    """Flatten multiclass probabilities into one-vs-rest (score, indicator) pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim == 1:
        y = labels.astype(int)
        if not set(np.unique(y)) <= {0, 1}:
            raise ValueError("1-D scores need binary labels in {0, 1}")
        return scores, y
    n, k = scores.shape
    if labels.shape[0] != n:
        raise ValueError(f"{n} score rows but {labels.shape[0]} labels")
    if k == 2:
        return scores[:, 1], labels.astype(int)
    onehot = np.zeros((n, k), dtype=int)
    onehot[np.arange(n), labels.astype(int)] = 1
    return scores.ravel(), onehot.ravel()


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC (ties count one half); multiclass input is micro-averaged."""
    s, y = _binary_inputs(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("AUC needs both positive and negative cases")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_curve_points(scores, labels) -> np.ndarray:
    """``(fpr, tpr, threshold)`` rows, thresholds descending."""
    s, y = _binary_inputs(scores, labels)
    thresholds = np.unique(s)[::-1]
    P, N = y.sum(), (1 - y).sum()
    rows = [(0.0, 0.0, np.inf)]
    for t in thresholds:
        pred = s >= t
        rows.append(((pred & (y == 0)).sum() / N, (pred & (y == 1)).sum() / P, t))
    return np.array(rows, dtype=np.float64)


def delong_components(scores, labels):
    """AUC and the DeLong placement values (V10 for positives, V01 for negatives)."""
    s, y = _binary_inputs(scores, labels)
    pos, neg = s[y == 1], s[y == 0]
    m, n = pos.size, neg.size
    if m < 2 or n < 2:
        raise DegenerateInputError("DeLong needs at least two cases of each class")
    r_all = rankdata(np.concatenate([pos, neg]))
    r_pos, r_neg = rankdata(pos), rankdata(neg)
    auc = (r_all[:m].sum() - m * (m + 1) / 2.0) / (m * n)
    v10 = (r_all[:m] - r_pos) / n
    v01 = 1.0 - (r_all[m:] - r_neg) / m
    return float(auc), v10, v01


def delong_variance(scores, labels) -> float:
    _, v10, v01 = delong_components(scores, labels)
    return float(np.var(v10, ddof=1) / v10.size + np.var(v01, ddof=1) / v01.size)


def delong_ci(scores, labels, level: float = 0.95) -> Tuple[float, float, float]:
    """AUC with a normal-approximation CI from the DeLong variance, clipped to [0, 1]."""
    auc, v10, v01 = delong_components(scores, labels)
    var = np.var(v10, ddof=1) / v10.size + np.var(v01, ddof=1) / v01.size
    half = norm.ppf(0.5 + level / 2.0) * np.sqrt(var)
    return auc, float(max(0.0, auc - half)), float(min(1.0, auc + half))


# --------------------------------------------------------------------------
# classification report


@dataclass
class ClassificationReport:
    auc: float
    auc_lo: float
    auc_hi: float
    error: float
    balanced_accuracy: float
    f1: float
    mean_average_precision: float
    kappa: float
    sensitivity: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _kappa(cm: np.ndarray) -> float:
    total = cm.sum()
    po = np.trace(cm) / total
    pe = (cm.sum(axis=0) * cm.sum(axis=1)).sum() / total**2
    if pe == 1.0:
        return 0.0
    return float((po - pe) / (1.0 - pe))


def classification_report(probs, labels) -> ClassificationReport:
    """Metrics from predicted class probabilities (rows sum to one).

    F1 is that of the positive class for binary problems and micro-averaged
    otherwise; mAP follows the same convention.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ValueError(f"probabilities {probs.shape} do not match {labels.shape[0]} labels")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("probability rows must sum to 1")
    k = probs.shape[1]
    pred = probs.argmax(axis=1)
    cm = confusion_matrix(labels, pred, labels=np.arange(k))
    support = cm.sum(axis=1)
    present = support > 0
    recall = np.divide(np.diag(cm), support, out=np.zeros(k), where=present)
    bacc = float(recall[present].mean())

    if k == 2:
        tp, fp, fn = cm[1, 1], cm[0, 1], cm[1, 0]
        f1 = float(2 * tp / (2 * tp + fp + fn)) if tp + fp + fn else 0.0
        mAP = float(average_precision_score(labels, probs[:, 1]))
    else:
        f1 = float(np.trace(cm) / cm.sum())
        s, y = _binary_inputs(probs, labels)
        mAP = float(average_precision_score(y, s))

    try:
        auc, lo, hi = delong_ci(probs, labels)
    except DegenerateInputError:
        auc = lo = hi = float("nan")
    return ClassificationReport(
        auc=auc, auc_lo=lo, auc_hi=hi,
        error=float(1.0 - np.trace(cm) / cm.sum()),
        balanced_accuracy=bacc,
        f1=f1,
        mean_average_precision=mAP,
        kappa=_kappa(cm),
        sensitivity=[float(r) for r in recall],
    )


# --------------------------------------------------------------------------
# survival statistics


def c_index(risks, times, censorship) -> float:
    """Harrell's concordance: pair (i, j) counts when t_i < t_j and i had the event."""
    risks = np.asarray(risks, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    event = np.asarray(censorship).astype(int) == 0
    concordant = 0.0
    comparable = 0
    for start in range(0, risks.size, _CINDEX_BLOCK):
        sl = slice(start, start + _CINDEX_BLOCK)
        ri, ti, ei = risks[sl, None], times[sl, None], event[sl, None]
        valid = ei & (ti < times[None, :])
        comparable += int(valid.sum())
        concordant += float((valid & (ri > risks[None, :])).sum())
        concordant += 0.5 * float((valid & (ri == risks[None, :])).sum())
    if comparable == 0:
        raise DegenerateInputError("no comparable pairs")
    return concordant / comparable


def chi2_sf_1df(x: float) -> float:
    """Upper tail of chi-square(1) via the regularized upper incomplete gamma Q(1/2, x/2)."""
    if x <= 0:
        return 1.0
    return float(gammaincc(0.5, x / 2.0))


def logrank_tables(times, event):
    """At-risk and death indicator matrices, one row per distinct event time."""
    uniq = np.unique(times[event])
    at_risk = (times[None, :] >= uniq[:, None]).astype(float)
    deaths = ((times[None, :] == uniq[:, None]) & event[None, :]).astype(float)
    return at_risk, deaths


def log_rank(times, censorship, group) -> Tuple[float, float]:
    """Two-sample log-rank chi-square statistic (1 df) and its p-value."""
    times = np.asarray(times, dtype=np.float64)
    event = np.asarray(censorship).astype(int) == 0
    group = np.asarray(group).astype(int)
    if group.sum() == 0 or group.sum() == group.size:
        raise DegenerateInputError("log-rank needs two non-empty groups")
    if not event.any():
        raise DegenerateInputError("log-rank needs at least one event")
    at_risk, deaths = logrank_tables(times, event)
    stat = logrank_statistic(at_risk, deaths, group[:, None].astype(float))[0]
    return float(stat), chi2_sf_1df(stat)


def logrank_statistic(at_risk: np.ndarray, deaths: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Vectorised statistic for many group assignments (columns of ``groups``)."""
    n = at_risk.sum(axis=1)[:, None]
    d = deaths.sum(axis=1)[:, None]
    n1 = at_risk @ groups
    d1 = deaths @ groups
    expected = d * n1 / n
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(n > 1, d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1), 0.0)
    num = (d1 - expected).sum(axis=0) ** 2
    den = var.sum(axis=0)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def stratify_by_median(risks) -> np.ndarray:
    """1 for risk strictly above the median (high risk), else 0."""
    risks = np.asarray(risks, dtype=np.float64)
    if risks.size < 2:
        raise DegenerateInputError("need at least two risk scores")
    groups = (risks > np.median(risks)).astype(int)
    if groups.sum() == 0 or groups.sum() == groups.size:
        raise DegenerateInputError("degenerate stratification: one risk group is empty")
    return groups


def km_curve(times, censorship) -> Tuple[np.ndarray, np.ndarray]:
    """Kaplan-Meier estimate at each distinct event time: ``(times, survival)``."""
    times = np.asarray(times, dtype=np.float64)
    event = np.asarray(censorship).astype(int) == 0
    uniq = np.unique(times[event])
    surv = np.empty(uniq.size)
    s = 1.0
    for i, t in enumerate(uniq):
        n_at_risk = np.sum(times >= t)
        d = np.sum((times == t) & event)
        s *= 1.0 - d / n_at_risk
        surv[i] = s
    return uniq, surv


@dataclass
class SurvivalReport:
    c_index: float
    logrank_statistic: float
    p_value: float
    km_low: Optional[Tuple[List[float], List[float]]] = None
    km_high: Optional[Tuple[List[float], List[float]]] = None

    def to_dict(self) -> dict:
        return asdict(self)


def survival_report(risks, times, censorship) -> SurvivalReport:
    risks = np.asarray(risks, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    censorship = np.asarray(censorship).astype(int)
    ci = c_index(risks, times, censorship)
    try:
        groups = stratify_by_median(risks)
        stat, p = log_rank(times, censorship, groups)
    except DegenerateInputError:
        return SurvivalReport(ci, float("nan"), float("nan"))
    curves: Dict[int, Tuple[List[float], List[float]]] = {}
    for g in (0, 1):
        t, s = km_curve(times[groups == g], censorship[groups == g])
        curves[g] = (t.tolist(), s.tolist())
    return SurvivalReport(ci, stat, p, km_low=curves[0], km_high=curves[1])
