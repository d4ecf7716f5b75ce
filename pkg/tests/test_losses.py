import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedbag.losses import (
    SurvivalLabel,
    cross_entropy,
    event_probabilities,
    hazards,
    risk_score,
    survival_curve,
    survival_loss,
    survival_nll,
)


def test_cross_entropy_examples():
    assert cross_entropy([0.0, 0.0], 0).value == pytest.approx(math.log(2), abs=1e-12)
    big = cross_entropy([1000.0, 0.0], 0)
    assert big.value == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(big.grad))
    expected = -math.log(math.exp(3) / (math.exp(1) + math.exp(2) + math.exp(3)))
    assert cross_entropy([1.0, 2.0, 3.0], 2).value == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.4076, abs=1e-4)
    with pytest.raises(ValueError):
        cross_entropy([0.0, 0.0], 2)


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    s = np.array([0.2, -1.0, 0.7])
    p = np.exp(s) / np.exp(s).sum()
    np.testing.assert_allclose(cross_entropy(s, 1).grad, p - np.eye(3)[1], atol=1e-15)


def test_hazard_examples():
    np.testing.assert_allclose(hazards(np.zeros(4)), 0.5)
    np.testing.assert_allclose(hazards([0, math.log(3), -math.log(3), 0]), [0.5, 0.75, 0.25, 0.5], atol=1e-15)
    vals = hazards([1.0, 10.0, 100.0, 1000.0])
    assert np.all(np.diff(vals) >= 0) and vals[-1] == 1.0


def test_survival_curve_examples():
    np.testing.assert_allclose(survival_curve(np.full(4, 0.5)), [1, 0.5, 0.25, 0.125, 0.0625])
    np.testing.assert_array_equal(survival_curve(np.zeros(4)), 1.0)
    h = np.random.default_rng(0).random(6)
    S = survival_curve(h)
    np.testing.assert_allclose(S[:-1] * (1 - h), S[1:], atol=1e-15)


def test_survival_nll_worked_cases():
    s = np.zeros(4)
    assert survival_nll(s, SurvivalLabel(2, 1)).value == pytest.approx(-math.log(0.125), abs=1e-12)
    assert survival_nll(s, SurvivalLabel(2, 0)).value == pytest.approx(-math.log(0.25) - math.log(0.5), abs=1e-12)
    assert -math.log(0.125) == pytest.approx(2.0794, abs=1e-4)
    s = np.array([0.3, -0.2, 1.0, 0.0])
    assert survival_nll(s, SurvivalLabel(0, 0)).value == pytest.approx(-math.log(hazards(s)[0]), abs=1e-12)
    with pytest.raises(ValueError):
        survival_nll(s, SurvivalLabel(4, 0))


def test_survival_loss_worked_cases():
    s = np.zeros(4)
    assert survival_loss(s, SurvivalLabel(2, 0), 0.15).value == pytest.approx(2.0794, abs=1e-4)
    assert survival_loss(s, SurvivalLabel(2, 1), 0.15).value == pytest.approx(0.85 * -math.log(0.125), abs=1e-12)
    assert 0.85 * -math.log(0.125) == pytest.approx(1.7675, abs=1e-4)
    r = np.random.default_rng(1)
    for _ in range(20):
        s, label = r.normal(size=4), SurvivalLabel(int(r.integers(4)), int(r.integers(2)))
        assert survival_loss(s, label, 0.0).value == pytest.approx(survival_nll(s, label).value, abs=1e-14)
    with pytest.raises(ValueError):
        survival_loss(s, label, 1.5)


def test_risk_score_examples():
    assert risk_score(np.full(4, 0.5)) == pytest.approx(-0.9375, abs=1e-15)
    assert risk_score(np.zeros(4)) == -4.0
    assert risk_score(np.full(4, 1 - 1e-12)) == pytest.approx(0.0, abs=1e-11)


@pytest.mark.parametrize("beta", [0.0, 0.15, 1.0])
def test_survival_gradient_matches_finite_differences(beta):
    r = np.random.default_rng(2)
    for _ in range(40):
        s = r.normal(scale=2, size=4)
        label = SurvivalLabel(int(r.integers(4)), int(r.integers(2)))
        g = survival_loss(s, label, beta).grad
        h = 1e-6
        num = np.array([
            (survival_loss(s + h * e, label, beta).value - survival_loss(s - h * e, label, beta).value) / (2 * h)
            for e in np.eye(4)
        ])
        np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-9)


def test_clamped_log_stays_finite():
    loss = survival_loss(np.full(4, 60.0), SurvivalLabel(3, 1))
    assert np.isfinite(loss.value) and np.all(np.isfinite(loss.grad))
    assert loss.value == pytest.approx(0.85 * -math.log(1e-12))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8))
def test_event_distribution_normalizes(h):
    h = np.array(h)
    assert abs(event_probabilities(h).sum() + survival_curve(h)[-1] - 1.0) < 1e-9
