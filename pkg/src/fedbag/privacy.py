"""Gaussian weight perturbation and the matching (epsilon, delta) bound.

Each named tensor receives i.i.d. noise ``N(0, (alpha * eta)^2)`` where
``eta`` is the population standard deviation of that tensor's entries
before perturbation. Weight matrices and bias vectors are separate tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Sequence, Union

import numpy as np

from .model import ModelWeights
from .rng import stream

RngSource = Union[np.random.Generator, Callable[[str], np.random.Generator]]


@dataclass(frozen=True)
class PrivacyConfig:
    alpha: float = 0.0
    sensitivity: float = 1.0
    report_epsilons: Sequence[float] = (0.1, 0.5, 1.0)

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.sensitivity > 0:
            raise ValueError(f"sensitivity must be > 0, got {self.sensitivity}")


@dataclass
class NoiseReport:
    eta: Dict[str, float]
    sigma: Dict[str, float]
    delta: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"eta": self.eta, "sigma": self.sigma, "delta_min": self.delta}


def layer_eta(W) -> float:
    W = np.asarray(W, dtype=np.float64)
    if W.size == 0:
        raise ValueError("cannot take the spread of an empty tensor")
    # np.std of a constant array can come out as a rounding residue, not 0
    if np.all(W == W.flat[0]):
        return 0.0
    return float(np.std(W))


def perturb_weights(weights: ModelWeights, alpha: float, rng: RngSource) -> ModelWeights:
    """Return a noisy copy of ``weights``.

    ``rng`` is either one generator consumed in tensor order, or a callable
    mapping a tensor name to its own generator (so noise for one tensor does
    not depend on which other tensors are perturbed).
    """
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    out = {}
    for name, w in weights.items():
        eta = layer_eta(w)
        sigma = alpha * eta
        if sigma == 0.0:
            out[name] = w.copy()
            continue
        gen = rng(name) if callable(rng) else rng
        out[name] = w + gen.normal(0.0, sigma, size=w.shape)
    return out


def delta_bound(epsilon: float, sigma: float, sensitivity: float = 1.0) -> float:
    """Smallest delta for which ``N(0, sigma^2)`` noise gives (epsilon, delta)-DP.

    Values >= 1 are returned as-is and mean the bound is vacuous.
    """
    if not (epsilon > 0 and sigma > 0 and sensitivity > 0):
        raise ValueError("epsilon, sigma and sensitivity must all be positive")
    return 1.25 * math.exp(-(epsilon**2) * sigma**2 / (2.0 * sensitivity**2))


def noise_report(weights: ModelWeights, config: PrivacyConfig) -> NoiseReport:
    eta = {name: layer_eta(w) for name, w in weights.items()}
    sigma = {name: config.alpha * e for name, e in eta.items()}
    delta = {}
    for name, s in sigma.items():
        if s > 0:
            delta[name] = {f"{eps:g}": delta_bound(eps, s, config.sensitivity) for eps in config.report_epsilons}
    return NoiseReport(eta, sigma, delta)


def noise_streams(seed: int, site: int, round_: int) -> Callable[[str], np.random.Generator]:
    return lambda name: stream(seed, "noise", site, round_, name)

