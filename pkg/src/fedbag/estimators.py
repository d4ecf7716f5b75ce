"""scikit-learn style estimators around the federated MIL trainer.

``X`` is always a sequence of bags, each an ``(n_instances, n_features)``
array. Passing ``sites`` to ``fit`` assigns bags to institutions; with
``scenario="federated"`` each site trains locally and weights are averaged
every round, with ``scenario="centralized"`` the site labels are ignored.

    >>> clf = AttentionMILClassifier(d_proj=64, d_attn=32, max_rounds=50)
    >>> clf.fit(train_bags, y, sites=site_of_bag, eval_set=(val_bags, y_val))
    >>> clf.predict_proba(test_bags)
"""

from __future__ import annotations

from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import FeatureBag, N_BINS, assign_bins, discretize_survival
from .federation import TrainConfig, train_federated
from .losses import DEFAULT_BETA, hazards, risk_score, survival_curve
from .metrics import c_index
from .model import DROPOUT_P, forward_bag
from .optim import DEFAULT_LR, DEFAULT_WEIGHT_DECAY, MIN_EPOCHS, PATIENCE

SCENARIOS = ("federated", "centralized")


def check_bags(X, n_features: Optional[int] = None) -> List[np.ndarray]:
    """Validate a sequence of bags and return them as float64 arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise ValueError("X must be a sequence of 2-D bags, not a single 2-D array")
    bags = []
    for i, bag in enumerate(X):
        arr = np.asarray(bag, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"bag {i} must be 2-D (instances x features), got shape {arr.shape}")
        if arr.shape[0] == 0:
            raise ValueError(f"bag {i} is empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"bag {i} contains NaN or infinite values")
        if n_features is None:
            n_features = arr.shape[1]
        elif arr.shape[1] != n_features:
            raise ValueError(f"bag {i} has {arr.shape[1]} features, expected {n_features}")
        bags.append(arr)
    if not bags:
        raise ValueError("X contains no bags")
    return bags


def check_survival_target(y):
    """Accept ``(n, 2)`` arrays of ``(time, censored)`` or a structured array with those fields."""
    y = np.asarray(y)
    if y.dtype.names:
        time, cens = y["time"], y["censored"]
    else:
        if y.ndim != 2 or y.shape[1] != 2:
            raise ValueError("survival target must have shape (n_samples, 2): (time, censored)")
        time, cens = y[:, 0], y[:, 1]
    time = np.asarray(time, dtype=np.float64)
    cens = np.asarray(cens).astype(int)
    if not set(np.unique(cens)) <= {0, 1}:
        raise ValueError("censored flags must be 0 or 1")
    if np.any(time < 0) or not np.all(np.isfinite(time)):
        raise ValueError("survival times must be finite and non-negative")
    return time, cens


class _BaseMIL(BaseEstimator):
    _task = "classification"

    def __init__(
        self,
        d_proj=512,
        d_attn=256,
        dropout=DROPOUT_P,
        lr=DEFAULT_LR,
        weight_decay=DEFAULT_WEIGHT_DECAY,
        max_rounds=200,
        min_epochs=MIN_EPOCHS,
        patience=PATIENCE,
        scenario="federated",
        alpha=0.0,
        n_jobs=1,
        random_state=0,
    ):
        self.d_proj = d_proj
        self.d_attn = d_attn
        self.dropout = dropout
        self.lr = lr
        self.weight_decay = weight_decay
        self.max_rounds = max_rounds
        self.min_epochs = min_epochs
        self.patience = patience
        self.scenario = scenario
        self.alpha = alpha
        self.n_jobs = n_jobs
        self.random_state = random_state

    def _config(self, n_out: int) -> TrainConfig:
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        return TrainConfig(
            task=self._task, n_out=n_out, d_proj=self.d_proj, d_attn=self.d_attn,
            dropout=self.dropout, lr=self.lr, weight_decay=self.weight_decay,
            beta=getattr(self, "beta", DEFAULT_BETA), max_rounds=self.max_rounds,
            min_epochs=self.min_epochs, patience=self.patience,
            alpha=self.alpha if self.scenario == "federated" else 0.0,
            seed=int(self.random_state or 0), n_jobs=self.n_jobs,
        )

    def _fit_bags(self, bags: List[FeatureBag], val: List[FeatureBag], sites, n_out: int):
        config = self._config(n_out)
        if self.scenario == "centralized" or sites is None:
            groups, site_ids = [bags], [0]
        else:
            sites = np.asarray(sites)
            if sites.shape[0] != len(bags):
                raise ValueError(f"sites has {sites.shape[0]} entries for {len(bags)} bags")
            site_ids = sorted(np.unique(sites).tolist())
            groups = [[b for b, s in zip(bags, sites) if s == sid] for sid in site_ids]
        self.weights_, self.history_ = train_federated(groups, val, config, site_ids=site_ids)
        self.n_sites_ = len(site_ids)
        return self

    def _logits(self, X) -> np.ndarray:
        check_is_fitted(self, "weights_")
        bags = check_bags(X, self.n_features_in_)
        return np.array([forward_bag(self.weights_, b).s for b in bags])

    def attention(self, X) -> List[np.ndarray]:
        """Eval-mode attention weights for every instance of every bag."""
        check_is_fitted(self, "weights_")
        out = []
        for b in check_bags(X, self.n_features_in_):
            out.append(forward_bag(self.weights_, b).A)
        return out


class AttentionMILClassifier(ClassifierMixin, _BaseMIL):
    """Gated-attention MIL classifier trained by federated averaging."""

    _task = "classification"

    def fit(self, X, y, sites=None, eval_set=None):
        bags = check_bags(X)
        self.n_features_in_ = bags[0].shape[1]
        y = np.asarray(y)
        if y.shape[0] != len(bags):
            raise ValueError(f"{len(bags)} bags but {y.shape[0]} labels")
        self.classes_, codes = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        train = [FeatureBag(str(i), 0, b, label=int(c)) for i, (b, c) in enumerate(zip(bags, codes))]
        val = []
        if eval_set is not None:
            Xv, yv = eval_set
            lookup = {c: i for i, c in enumerate(self.classes_.tolist())}
            val = [
                FeatureBag(f"v{i}", 0, b, label=lookup[c])
                for i, (b, c) in enumerate(zip(check_bags(Xv, self.n_features_in_), np.asarray(yv).tolist()))
            ]
        return self._fit_bags(train, val, sites, self.classes_.size)

    def decision_function(self, X) -> np.ndarray:
        s = self._logits(X)
        return s[:, 1] - s[:, 0] if s.shape[1] == 2 else s

    def predict_proba(self, X) -> np.ndarray:
        s = self._logits(X)
        e = np.exp(s - s.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


class AttentionMILSurvival(_BaseMIL):
    """Discrete-time hazard MIL model; ``predict`` returns risk scores.

    ``y`` holds ``(time, censored)`` pairs with ``censored = 1`` for
    right-censored cases. Cut points are the quartiles of the uncensored
    training times.
    """

    _task = "survival"

    def __init__(self, beta=DEFAULT_BETA, d_proj=512, d_attn=256, dropout=DROPOUT_P, lr=DEFAULT_LR,
                 weight_decay=DEFAULT_WEIGHT_DECAY, max_rounds=200, min_epochs=MIN_EPOCHS, patience=PATIENCE,
                 scenario="federated", alpha=0.0, n_jobs=1, random_state=0):
        super().__init__(d_proj=d_proj, d_attn=d_attn, dropout=dropout, lr=lr, weight_decay=weight_decay,
                         max_rounds=max_rounds, min_epochs=min_epochs, patience=patience, scenario=scenario,
                         alpha=alpha, n_jobs=n_jobs, random_state=random_state)
        self.beta = beta

    def _as_bags(self, X, y, prefix: str) -> List[FeatureBag]:
        bags = check_bags(X, getattr(self, "n_features_in_", None))
        time, cens = check_survival_target(y)
        if time.shape[0] != len(bags):
            raise ValueError(f"{len(bags)} bags but {time.shape[0]} survival targets")
        bins = assign_bins(time, self.cuts_)
        return [
            FeatureBag(f"{prefix}{i}", 0, b, label=int(r), censorship=int(c), time=float(t))
            for i, (b, r, c, t) in enumerate(zip(bags, bins, cens, time))
        ]

    def fit(self, X, y, sites=None, eval_set=None):
        time, cens = check_survival_target(y)
        cuts, _ = discretize_survival(time, cens, N_BINS)
        self.cuts_ = cuts
        train = self._as_bags(X, y, "")
        self.n_features_in_ = train[0].features.shape[1]
        val = self._as_bags(*eval_set, "v") if eval_set is not None else []
        return self._fit_bags(train, val, sites, N_BINS)

    def predict_hazards(self, X) -> np.ndarray:
        return hazards(self._logits(X))

    def predict_survival_function(self, X) -> np.ndarray:
        """``S(0..R-1)`` per bag."""
        return np.array([survival_curve(h)[1:] for h in self.predict_hazards(X)])

    def predict(self, X) -> np.ndarray:
        return np.array([risk_score(h) for h in self.predict_hazards(X)])

    def score(self, X, y) -> float:
        time, cens = check_survival_target(y)
        return c_index(self.predict(X), time, cens)

