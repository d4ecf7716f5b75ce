"""Federated averaging across simulated sites, plus the centralized and
single-site baselines.

Every round each site runs one local epoch (one Adam step per bag), perturbs
its weights with Gaussian noise, and the server averages the perturbed
copies with equal weight. The average is copied back to every site and the
pooled validation loss of the global model drives early stopping.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset, FeatureBag
from .losses import DEFAULT_BETA, bag_loss, hazards, risk_score
from .metrics import classification_report, survival_report
from .model import (
    DROPOUT_P,
    ModelDims,
    ModelWeights,
    backward_bag,
    copy_weights,
    forward_bag,
    init_weights,
)
from .optim import DEFAULT_LR, DEFAULT_WEIGHT_DECAY, MIN_EPOCHS, PATIENCE, Adam, EarlyStopping
from .privacy import PrivacyConfig, noise_report, noise_streams, perturb_weights
from .rng import stream

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """A site failed during a round; message carries round and site."""


@dataclass(frozen=True)
class TrainConfig:
    task: str = "classification"
    n_out: int = 2
    d_proj: int = 512
    d_attn: int = 256
    dropout: float = DROPOUT_P
    lr: float = DEFAULT_LR
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    beta: float = DEFAULT_BETA
    max_rounds: int = 200
    min_epochs: int = MIN_EPOCHS
    patience: int = PATIENCE
    early_stopping: bool = True
    alpha: float = 0.0
    sensitivity: float = 1.0
    seed: int = 0
    n_jobs: int = 1
    reset_optimizer: bool = False
    record_noise: bool = True

    def dims(self, d_in: int) -> ModelDims:
        return ModelDims(d_in, self.d_proj, self.d_attn, self.n_out)


@dataclass
class ClientSite:
    site_id: int
    index: int
    train: List[FeatureBag]
    weights: ModelWeights
    optimizer: Adam
    val: List[FeatureBag] = field(default_factory=list)

    def __post_init__(self):
        if not self.train:
            raise ValueError(f"site {self.site_id} has no training bags")


@dataclass
class RoundLog:
    round: int
    train_loss: Dict[int, float]
    val_loss: Optional[float]
    noise: Dict[int, dict]
    duration: float

    def to_dict(self) -> dict:
        out = asdict(self)
        out["train_loss"] = {str(k): v for k, v in self.train_loss.items()}
        out["noise"] = {str(k): v for k, v in self.noise.items()}
        return out


@dataclass
class TrainHistory:
    rounds: List[RoundLog] = field(default_factory=list)
    best_round: int = 0
    stopped_round: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "best_round": self.best_round,
            "stopped_round": self.stopped_round,
            "rounds": [r.to_dict() for r in self.rounds],
        }


# --------------------------------------------------------------------------
# building blocks


def local_epoch(site: ClientSite, config: TrainConfig, round_: int) -> float:
    """One pass over the site's training bags in a seeded order; returns the mean loss."""
    order = stream(config.seed, "shuffle", site.index, round_).permutation(len(site.train))
    drop_rng = stream(config.seed, "dropout", site.index, round_)
    total = 0.0
    for j in order:
        bag = site.train[j]
        try:
            trace = forward_bag(site.weights, bag.features, train=True, rng=drop_rng, dropout=config.dropout)
            loss = bag_loss(config.task, trace.s, bag.target(config.task), config.beta)
            grads = backward_bag(site.weights, trace, loss.grad)
            site.optimizer.step(site.weights, grads)
        except (ValueError, FloatingPointError) as exc:
            raise type(exc)(f"bag {bag.bag_id}: {exc}") from exc
        total += loss.value
    return total / len(site.train)


def aggregate(
    client_weights: Sequence[ModelWeights],
    alpha: float = 0.0,
    rngs: Optional[Sequence[Callable[[str], np.random.Generator]]] = None,
) -> ModelWeights:
    """Equal-weight mean of the (optionally perturbed) client weights.

    Clients are summed in the order given, so callers pass them sorted by site.
    """
    if not client_weights:
        raise ValueError("aggregate needs at least one client")
    names = tuple(client_weights[0])
    for i, w in enumerate(client_weights):
        if tuple(w) != names or any(w[n].shape != client_weights[0][n].shape for n in names):
            raise ValueError(f"client {i} weights do not match client 0 in names/shapes")
    if alpha > 0 and (rngs is None or len(rngs) != len(client_weights)):
        raise ValueError("alpha > 0 needs one rng source per client")

    acc: Optional[ModelWeights] = None
    for i, w in enumerate(client_weights):
        sent = perturb_weights(w, alpha, rngs[i]) if alpha > 0 else w
        if acc is None:
            acc = copy_weights(sent)
        else:
            for n in names:
                acc[n] += sent[n]
    B = len(client_weights)
    return {n: acc[n] / B for n in names}


def synchronize(global_weights: ModelWeights, sites: Sequence[ClientSite]) -> None:
    for site in sites:
        site.weights = copy_weights(global_weights)


def mean_loss(weights: ModelWeights, bags: Sequence[FeatureBag], task: str, beta: float = DEFAULT_BETA) -> float:
    """Eval-mode mean loss over ``bags``."""
    total = 0.0
    for bag in bags:
        s = forward_bag(weights, bag.features).s
        total += bag_loss(task, s, bag.target(task), beta).value
    return total / len(bags)


# --------------------------------------------------------------------------
# training loops


def train_federated(
    site_train: Sequence[List[FeatureBag]],
    val_bags: Sequence[FeatureBag],
    config: TrainConfig,
    site_ids: Optional[Sequence[int]] = None,
    init: Optional[ModelWeights] = None,
    on_round: Optional[Callable[[int, ModelWeights, List[ClientSite]], None]] = None,
) -> Tuple[ModelWeights, TrainHistory]:
    """Run federated averaging; return the best-validation global weights.

    ``site_train`` lists each site's training bags in ascending site order.
    Without validation bags (or with ``early_stopping=False``) all
    ``max_rounds`` run and the final global model is returned.
    """
    if not site_train:
        raise ValueError("need at least one site")
    site_ids = list(site_ids) if site_ids is not None else list(range(len(site_train)))
    d_in = site_train[0][0].features.shape[1]
    global_w = copy_weights(init) if init is not None else init_weights(config.dims(d_in), config.seed)
    sites = [
        ClientSite(
            site_id=sid, index=i, train=list(bags), weights=copy_weights(global_w),
            optimizer=Adam(lr=config.lr, weight_decay=config.weight_decay),
        )
        for i, (sid, bags) in enumerate(zip(site_ids, site_train))
    ]
    history = TrainHistory()
    if config.max_rounds == 0:
        return global_w, history

    privacy = PrivacyConfig(alpha=config.alpha, sensitivity=config.sensitivity)
    stopper = EarlyStopping(patience=config.patience, min_epochs=config.min_epochs)
    use_val = config.early_stopping and len(val_bags) > 0
    pool = ThreadPoolExecutor(max_workers=config.n_jobs) if config.n_jobs > 1 else None
    try:
        for k in range(1, config.max_rounds + 1):
            started = time.perf_counter()
            losses = _run_sites(sites, config, k, pool)

            noise = {}
            if config.record_noise and config.alpha > 0:
                noise = {s.site_id: noise_report(s.weights, privacy).to_dict() for s in sites}
            rngs = [noise_streams(config.seed, s.index, k) for s in sites]
            global_w = aggregate([s.weights for s in sites], config.alpha, rngs)
            synchronize(global_w, sites)
            if config.reset_optimizer:
                for s in sites:
                    s.optimizer.reset()

            val_loss = mean_loss(global_w, val_bags, config.task, config.beta) if len(val_bags) else None
            if val_loss is not None and not np.isfinite(val_loss):
                val_loss = float("inf")
            history.rounds.append(
                RoundLog(k, dict(zip([s.site_id for s in sites], losses)), val_loss, noise,
                         time.perf_counter() - started)
            )
            logger.debug("round %d: train %s val %s", k, np.round(losses, 4).tolist(), val_loss)
            if on_round is not None:
                on_round(k, global_w, sites)
            if use_val and stopper.update(val_loss, k, global_w):
                history.stopped_round = k
                break
    finally:
        if pool is not None:
            pool.shutdown()

    if use_val and stopper.best_checkpoint is not None:
        history.best_round = stopper.best_epoch
        return stopper.best_checkpoint, history
    history.best_round = len(history.rounds)
    return global_w, history


def _run_sites(sites: List[ClientSite], config: TrainConfig, k: int, pool) -> List[float]:
    def run(site):
        try:
            return local_epoch(site, config, k)
        except Exception as exc:
            raise TrainingError(f"round {k}, site {site.site_id}: {exc}") from exc

    if pool is None:
        return [run(s) for s in sites]
    return list(pool.map(run, sites))


def train_centralized(site_train: Sequence[List[FeatureBag]], val_bags, config: TrainConfig, **kw):
    """One model on the union of all sites' training data (noise disabled)."""
    pooled = [b for bags in site_train for b in bags]
    return train_federated([pooled], val_bags, replace(config, alpha=0.0), **kw)


def train_single_site(dataset: Dataset, site_id: int, config: TrainConfig, **kw):
    """Train only on one site's training split, early-stopping on its own validation split."""
    if site_id not in dataset.sites:
        raise KeyError(f"unknown site_id {site_id}; have {dataset.site_ids}")
    site = dataset.sites[site_id]
    return train_federated([site.train], site.val, replace(config, alpha=0.0), site_ids=[site_id], **kw)


def train_scenario(dataset: Dataset, scenario: str, config: TrainConfig, **kw):
    """Dispatch ``centralized``, ``federated`` or ``single_site:<id>``."""
    if scenario == "federated":
        return train_federated(
            [dataset.sites[s].train for s in dataset.site_ids], dataset.pooled("val"), config,
            site_ids=dataset.site_ids, **kw,
        )
    if scenario == "centralized":
        return train_centralized([dataset.sites[s].train for s in dataset.site_ids], dataset.pooled("val"), config, **kw)
    if scenario.startswith("single_site:"):
        return train_single_site(dataset, int(scenario.split(":", 1)[1]), config, **kw)
    raise ValueError(f"unknown scenario {scenario!r}")


# --------------------------------------------------------------------------
# evaluation


def predict_proba(weights: ModelWeights, bags: Sequence[FeatureBag]) -> np.ndarray:
    out = []
    for bag in bags:
        s = forward_bag(weights, bag.features).s
        e = np.exp(s - s.max())
        out.append(e / e.sum())
    return np.array(out)


def predict_risk(weights: ModelWeights, bags: Sequence[FeatureBag]) -> np.ndarray:
    return np.array([risk_score(hazards(forward_bag(weights, b.features).s)) for b in bags])


def evaluate(weights: ModelWeights, bags: Sequence[FeatureBag], task: str):
    if task == "classification":
        return classification_report(predict_proba(weights, bags), [b.label for b in bags])
    return survival_report(
        predict_risk(weights, bags), [b.time for b in bags], [b.censorship for b in bags]
    )
