"""Bag-level losses: softmax cross-entropy and the discrete-time survival NLL.

Survival conventions used throughout:

* ``S(r) = prod_{u=0..r} (1 - h_u)`` with ``S(-1) = 1``
* ``c = 1`` marks a censored case, ``Y`` is the discrete time bin in ``0..R-1``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_CLAMP = 1e-12
DEFAULT_BETA = 0.15


@dataclass(frozen=True)
class LossValue:
    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class SurvivalLabel:
    """Discrete survival label: time bin, censorship flag, raw follow-up time."""

    Y: int
    c: int
    t_cont: float = float("nan")

    def __post_init__(self):
        if self.c not in (0, 1):
            raise ValueError(f"censorship must be 0 or 1, got {self.c!r}")
        if self.Y < 0:
            raise ValueError(f"time bin must be non-negative, got {self.Y}")


def _log_softmax(s: np.ndarray) -> np.ndarray:
    m = s.max()
    return s - m - np.log(np.exp(s - m).sum())


def cross_entropy(s, y: int) -> LossValue:
    s = np.asarray(s, dtype=np.float64)
    if not 0 <= y < s.shape[0]:
        raise ValueError(f"class index {y} out of range for {s.shape[0]} logits")
    logp = _log_softmax(s)
    grad = np.exp(logp)
    grad[y] -= 1.0
    return LossValue(float(-logp[y]), grad)


def sigmoid(s):
    s = np.asarray(s, dtype=np.float64)
    e = np.exp(-np.abs(s))
    return np.where(s >= 0, 1.0, e) / (1.0 + e)


def hazards(s) -> np.ndarray:
    return sigmoid(s)


def survival_curve(h) -> np.ndarray:
    """Values ``S(-1), S(0), ..., S(R-1)`` (length ``R + 1``)."""
    h = np.asarray(h, dtype=np.float64)
    return np.concatenate(([1.0], np.cumprod(1.0 - h)))


def event_probabilities(h) -> np.ndarray:
    """``P(T = r) = h_r * S(r - 1)`` for ``r = 0..R-1``."""
    h = np.asarray(h, dtype=np.float64)
    return h * survival_curve(h)[:-1]


def risk_score(h) -> float:
    """Negative sum of survival probabilities; larger means earlier event."""
    return float(-survival_curve(h)[1:].sum())


def _survival_terms(s: np.ndarray, label: SurvivalLabel):
    """Return (censored term, uncensored term) and their gradients w.r.t. ``s``.

    Both are written as ``-log`` of clamped probabilities; a clamped term
    contributes zero gradient.
    """
    R = s.shape[0]
    if label.Y >= R:
        raise ValueError(f"time bin {label.Y} out of range for R={R}")
    h = sigmoid(s)
    one_minus = sigmoid(-s)
    S = np.concatenate(([1.0], np.cumprod(one_minus)))
    Y = label.Y

    # -log S(Y): d/ds_u = h_u for u <= Y
    cens_val = -np.log(max(S[Y + 1], LOG_CLAMP))
    cens_grad = np.zeros(R)
    if S[Y + 1] > LOG_CLAMP:
        cens_grad[: Y + 1] = h[: Y + 1]

    # -log S(Y-1) - log h_Y
    unc_val = -np.log(max(S[Y], LOG_CLAMP)) - np.log(max(h[Y], LOG_CLAMP))
    unc_grad = np.zeros(R)
    if S[Y] > LOG_CLAMP:
        unc_grad[:Y] = h[:Y]
    if h[Y] > LOG_CLAMP:
        unc_grad[Y] -= one_minus[Y]
    return cens_val, cens_grad, unc_val, unc_grad


def survival_nll(s, label: SurvivalLabel) -> LossValue:
    s = np.asarray(s, dtype=np.float64)
    cv, cg, uv, ug = _survival_terms(s, label)
    c = label.c
    return LossValue(float(c * cv + (1 - c) * uv), c * cg + (1 - c) * ug)


def survival_loss(s, label: SurvivalLabel, beta: float = DEFAULT_BETA) -> LossValue:
    """``(1 - beta) * NLL + beta * (uncensored part of NLL)``."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    s = np.asarray(s, dtype=np.float64)
    cv, cg, uv, ug = _survival_terms(s, label)
    c = label.c
    nll = c * cv + (1 - c) * uv
    nll_grad = c * cg + (1 - c) * ug
    unc = (1 - c) * uv
    unc_grad = (1 - c) * ug
    return LossValue(
        float((1 - beta) * nll + beta * unc),
        (1 - beta) * nll_grad + beta * unc_grad,
    )


def bag_loss(task: str, s, label, beta: float = DEFAULT_BETA) -> LossValue:
    if task == "classification":
        return cross_entropy(s, int(label))
    if task == "survival":
        return survival_loss(s, label, beta)
    raise ValueError(f"unknown task {task!r}")
