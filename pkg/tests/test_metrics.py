import math

import numpy as np
import pytest
from scipy.stats import norm

from fedbag.metrics import (
    DegenerateInputError,
    c_index,
    chi2_sf_1df,
    classification_report,
    delong_ci,
    delong_components,
    delong_variance,
    km_curve,
    log_rank,
    logrank_statistic,
    logrank_tables,
    roc_auc,
    roc_curve_points,
    stratify_by_median,
    survival_report,
)

from .helpers import brute_auc, brute_cindex, brute_logrank


def test_auc_examples():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.3] * 6, [0, 1, 0, 1, 0, 1]) == 0.5
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    with pytest.raises(DegenerateInputError):
        roc_auc([0.1, 0.2], [1, 1])


def test_auc_equals_brute_force():
    r = np.random.default_rng(0)
    for _ in range(100):
        n = int(r.integers(2, 201))
        labels = r.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = r.integers(0, 15, n) / 15.0  # plenty of ties
        assert roc_auc(scores, labels) == brute_auc(scores, labels)


def test_multiclass_auc_is_micro_over_flattened_pairs():
    r = np.random.default_rng(1)
    probs = r.dirichlet(np.ones(3), size=30)
    labels = r.integers(0, 3, 30)
    onehot = np.eye(3)[labels]
    assert roc_auc(probs, labels) == pytest.approx(brute_auc(probs.ravel(), onehot.ravel().astype(int)), abs=1e-12)


def _quadratic_delong_variance(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    psi = lambda a, b: 1.0 if a > b else 0.5 if a == b else 0.0
    v10 = np.array([np.mean([psi(p, q) for q in neg]) for p in pos])
    v01 = np.array([np.mean([psi(p, q) for p in pos]) for q in neg])
    return np.var(v10, ddof=1) / len(pos) + np.var(v01, ddof=1) / len(neg)


def test_fast_delong_matches_quadratic_version():
    r = np.random.default_rng(2)
    for _ in range(10):
        n = 60
        labels = r.integers(0, 2, n)
        scores = np.round(r.normal(size=n) + labels, 1)
        assert abs(delong_variance(scores, labels) - _quadratic_delong_variance(scores, labels)) < 1e-10


def test_delong_variance_matches_bootstrap():
    r = np.random.default_rng(3)
    n = 200
    labels = r.integers(0, 2, n)
    scores = r.normal(size=n) + 1.0 * labels
    boot = []
    for _ in range(2000):
        idx = r.integers(0, n, n)
        if labels[idx].min() == labels[idx].max():
            continue
        boot.append(roc_auc(scores[idx], labels[idx]))
    assert abs(delong_variance(scores, labels) / np.var(boot) - 1) < 0.15


def test_delong_ci_edges_and_scaling():
    auc, lo, hi = delong_ci([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert (auc, lo, hi) == (1.0, 1.0, 1.0)
    r = np.random.default_rng(4)
    widths = []
    for n in (100, 400, 1600):
        labels = np.arange(n) % 2
        scores = r.normal(size=n) + labels
        _, lo, hi = delong_ci(scores, labels)
        widths.append(hi - lo)
    assert widths[0] / widths[1] == pytest.approx(2, rel=0.25)
    assert widths[1] / widths[2] == pytest.approx(2, rel=0.25)
    with pytest.raises(DegenerateInputError):
        delong_components([0.1, 0.2, 0.3], [0, 1, 1])


def test_roc_points_span_corners():
    pts = roc_curve_points([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert tuple(pts[0, :2]) == (0.0, 0.0) and tuple(pts[-1, :2]) == (1.0, 1.0)
    fpr, tpr = pts[:, 0], pts[:, 1]
    assert np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2) == pytest.approx(0.75)


def test_classification_report_examples():
    labels = np.array([0, 1, 1, 0, 1])
    perfect = np.eye(2)[labels]
    rep = classification_report(perfect, labels)
    assert (rep.error, rep.balanced_accuracy, rep.f1, rep.kappa) == (0.0, 1.0, 1.0, 1.0)
    labels = np.array([0] * 90 + [1] * 10)
    majority = np.tile([0.8, 0.2], (100, 1))
    rep = classification_report(majority, labels)
    assert rep.balanced_accuracy == 0.5 and rep.kappa == 0.0
    with pytest.raises(ValueError):
        classification_report(perfect, [0, 1])


def test_report_invariances():
    r = np.random.default_rng(5)
    probs = r.dirichlet(np.ones(3), size=60)
    labels = r.integers(0, 3, 60)
    base = classification_report(probs, labels)
    perm = r.permutation(60)
    shuffled = classification_report(probs[perm], labels[perm])
    for k, v in base.to_dict().items():
        assert shuffled.to_dict()[k] == pytest.approx(v, abs=1e-12)
    relabel = np.array([2, 0, 1])
    renamed = classification_report(probs[:, np.argsort(relabel)], relabel[labels])
    assert renamed.kappa == pytest.approx(base.kappa, abs=1e-12)


def test_c_index_examples():
    assert c_index([2.0, 1.0], [1, 5], [0, 0]) == 1.0
    assert c_index([1.0] * 5, [1, 2, 3, 4, 5], [0] * 5) == 0.5
    with pytest.raises(DegenerateInputError):
        c_index([1.0, 2.0], [1, 2], [1, 1])


def test_c_index_equals_brute_force_and_is_rank_invariant():
    r = np.random.default_rng(6)
    for _ in range(100):
        n = int(r.integers(2, 201))
        times = r.integers(1, 30, n).astype(float)
        cens = (r.random(n) < 0.3).astype(int)
        cens[0] = 0
        times[0] = 0.5
        risks = r.integers(0, 10, n).astype(float)
        ci = c_index(risks, times, cens)
        assert ci == brute_cindex(risks, times, cens)
        assert c_index(np.exp(risks) * 3 + 1, times, cens) == ci


def test_chi2_tail_matches_closed_form():
    for x in [1e-6, 0.1, 1.0, 3.841458820694124, 10.0, 50.0]:
        assert abs(chi2_sf_1df(x) - math.erfc(math.sqrt(x / 2))) < 1e-10
    assert chi2_sf_1df(0.0) == 1.0


def test_logrank_hand_table():
    times = [1, 2, 3, 10, 20, 30]
    cens = [0] * 6
    group = [1, 1, 1, 0, 0, 0]
    stat, p = log_rank(times, cens, group)
    # O-E = 3 - (1/2 + 2/5 + 1/4) = 1.85; V = 0.25 + 0.24 + 0.1875 = 0.6775
    assert stat == pytest.approx(1.85**2 / 0.6775, abs=1e-12)
    assert stat == pytest.approx(brute_logrank(times, cens, group), abs=1e-12)
    assert p == pytest.approx(math.erfc(math.sqrt(stat / 2)), abs=1e-12)


def test_logrank_symmetry_and_identical_groups():
    r = np.random.default_rng(7)
    for _ in range(20):
        n = 30
        times = r.integers(1, 20, n).astype(float)
        cens = (r.random(n) < 0.3).astype(int)
        cens[0] = 0
        group = np.arange(n) % 2
        a, pa = log_rank(times, cens, group)
        b, pb = log_rank(times, cens, 1 - group)
        assert a == pytest.approx(b, abs=1e-10) and 0 < pa <= 1
        assert a == pytest.approx(brute_logrank(times, cens, group), abs=1e-10)
    t = np.repeat([1.0, 4.0, 9.0], 2)
    stat, p = log_rank(t, [0] * 6, [0, 1] * 3)
    assert stat == 0.0 and p == 1.0
    with pytest.raises(DegenerateInputError):
        log_rank([1, 2], [1, 1], [0, 1])


def test_logrank_p_matches_permutation_oracle():
    r = np.random.default_rng(8)
    n = 40
    group = np.arange(n) % 2
    times = r.exponential(1.0 / np.where(group == 1, 2.5, 1.0))
    cens = (r.random(n) < 0.2).astype(int)
    stat, p = log_rank(times, cens, group)
    at_risk, deaths = logrank_tables(times, cens == 0)
    hits = total = 0
    for _ in range(10):
        G = np.stack([r.permutation(group) for _ in range(10_000)], axis=1).astype(float)
        hits += int((logrank_statistic(at_risk, deaths, G) >= stat - 1e-12).sum())
        total += G.shape[1]
    assert 0.01 < p < 0.5
    assert abs(p - hits / total) < 0.02


def test_stratify_by_median():
    np.testing.assert_array_equal(stratify_by_median([1, 2, 3, 4]), [0, 0, 1, 1])
    np.testing.assert_array_equal(stratify_by_median([1, 2, 3]), [0, 0, 1])
    risks = np.random.default_rng(9).normal(size=11)
    np.testing.assert_array_equal(stratify_by_median(risks), stratify_by_median(np.exp(risks)))
    with pytest.raises(DegenerateInputError, match="degenerate stratification"):
        stratify_by_median([2.0] * 4)


def test_km_curve():
    t, s = km_curve([1, 2, 3, 4], [0, 0, 0, 0])
    np.testing.assert_array_equal(t, [1, 2, 3, 4])
    np.testing.assert_allclose(s, [0.75, 0.5, 0.25, 0.0])
    t, s = km_curve([1, 2, 3], [1, 1, 1])
    assert t.size == 0 and s.size == 0  # no drops: S stays at 1
    base = km_curve([1, 2, 3, 4], [0, 0, 0, 0])[1][:3]
    extended = km_curve([1, 2, 3, 4, 9], [0, 0, 0, 0, 1])[1][:4]
    assert np.all(np.diff(extended) <= 0)
    np.testing.assert_allclose(km_curve([1, 2, 3, 10], [0, 0, 0, 1])[1], km_curve([1, 2, 3, 3.5], [0, 0, 0, 1])[1])
    assert base[0] == 0.75


def test_survival_report_fields():
    r = np.random.default_rng(10)
    times = r.exponential(size=50)
    rep = survival_report(-times + r.normal(scale=0.3, size=50), times, np.zeros(50, dtype=int))
    assert rep.c_index > 0.7 and rep.p_value < 0.05
    assert rep.km_low is not None and rep.km_high is not None
    flat = survival_report(np.ones(50), times, np.zeros(50, dtype=int))
    assert flat.c_index == 0.5 and math.isnan(flat.p_value)
