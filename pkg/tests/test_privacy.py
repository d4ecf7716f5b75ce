import math

import numpy as np
import pytest

from fedbag.privacy import PrivacyConfig, delta_bound, layer_eta, noise_report, noise_streams, perturb_weights


def test_layer_eta_examples():
    assert layer_eta(np.full((3, 3), 2.5)) == 0.0
    assert layer_eta([-1.0, 1.0]) == 1.0
    W = np.random.default_rng(0).normal(size=50)
    assert layer_eta(-3 * W) == pytest.approx(3 * layer_eta(W), rel=1e-12)
    with pytest.raises(ValueError):
        layer_eta([])


@pytest.mark.parametrize("alpha", [0.01, 0.1, 1.0])
def test_noise_std_matches_alpha_eta(alpha):
    W = {"w": np.tile([-1.0, 1.0], 50_000)}
    noisy = perturb_weights(W, alpha, np.random.default_rng(3))
    noise = noisy["w"] - W["w"]
    assert abs(noise.std() / (alpha * 1.0) - 1) < 0.02


def test_zero_alpha_and_zero_spread_are_identity():
    r = np.random.default_rng(0)
    W = {"a": r.normal(size=(4, 4)), "b": np.full(3, 0.7)}
    out = perturb_weights(W, 0.0, r)
    for k in W:
        assert out[k].tobytes() == W[k].tobytes()
    out = perturb_weights(W, 5.0, r)
    assert out["b"].tobytes() == W["b"].tobytes()
    assert not np.array_equal(out["a"], W["a"])


def test_input_not_mutated():
    W = {"a": np.arange(4.0)}
    perturb_weights(W, 1.0, np.random.default_rng(0))
    np.testing.assert_array_equal(W["a"], np.arange(4.0))


def test_per_tensor_streams_are_independent_of_other_tensors():
    r = np.random.default_rng(0)
    a, b = r.normal(size=5), r.normal(size=5)
    both = perturb_weights({"a": a, "b": b}, 0.1, noise_streams(0, 1, 2))
    only_b = perturb_weights({"b": b}, 0.1, noise_streams(0, 1, 2))
    np.testing.assert_array_equal(both["b"], only_b["b"])
    other_round = perturb_weights({"b": b}, 0.1, noise_streams(0, 1, 3))
    assert not np.array_equal(other_round["b"], only_b["b"])


def test_delta_bound_examples():
    assert abs(delta_bound(1, 1, 1) - 1.25 * math.exp(-0.5)) < 1e-12
    grid = [delta_bound(1, s, 1) for s in np.linspace(0.1, 20, 200)]
    assert np.all(np.diff(grid) < 0)
    assert delta_bound(1, 50, 1) < 1e-300 or delta_bound(1, 50, 1) == 0.0
    assert delta_bound(1, 1, 2) > delta_bound(1, 1, 1)
    for bad in [(0, 1, 1), (1, 0, 1), (1, 1, -1)]:
        with pytest.raises(ValueError):
            delta_bound(*bad)


def test_noise_report_contents():
    W = {"a": np.array([-1.0, 1.0]), "b": np.zeros(2)}
    rep = noise_report(W, PrivacyConfig(alpha=0.5, report_epsilons=(1.0,)))
    assert rep.eta == {"a": 1.0, "b": 0.0}
    assert rep.sigma == {"a": 0.5, "b": 0.0}
    assert rep.delta == {"a": {"1": delta_bound(1.0, 0.5)}}
    with pytest.raises(ValueError):
        PrivacyConfig(alpha=-1)
