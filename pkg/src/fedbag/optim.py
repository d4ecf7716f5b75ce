"""Adam with coupled L2 weight decay, and the early-stopping controller."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .model import ModelWeights, copy_weights

DEFAULT_LR = 2e-4
DEFAULT_WEIGHT_DECAY = 1e-5
MIN_EPOCHS = 35
PATIENCE = 20


class Adam:
    """Adam over a dict of named tensors.

    Weight decay is added to the gradient before the moment updates
    (``g <- g + weight_decay * w``), i.e. classic L2 rather than AdamW.
    ``step`` updates ``weights`` in place.
    """

    def __init__(self, lr=DEFAULT_LR, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=DEFAULT_WEIGHT_DECAY):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, weights: ModelWeights, grads: Dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name}")
            if g.shape != weights[name].shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != weight shape {weights[name].shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, w in weights.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * w
            if name not in self.m:
                self.m[name] = np.zeros_like(w)
                self.v[name] = np.zeros_like(w)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            w -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def reset(self) -> None:
        self.m.clear()
        self.v.clear()
        self.t = 0

    def state_dict(self) -> dict:
        return {
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
            "t": self.t,
        }

    def load_state_dict(self, state: dict) -> None:
        self.m = {k: np.array(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=np.float64) for k, v in state["v"].items()}
        self.t = int(state["t"])


@dataclass
class EarlyStopping:
    """Stop once validation loss has not strictly improved for ``patience``
    epochs, but never before ``min_epochs``. Epochs are 1-based.
    """

    patience: int = PATIENCE
    min_epochs: int = MIN_EPOCHS
    best_loss: float = math.inf
    best_epoch: int = 0
    epochs_since_improve: int = 0
    best_checkpoint: Optional[ModelWeights] = field(default=None, repr=False)
    stopped_epoch: Optional[int] = None
    _last_epoch: int = field(default=0, repr=False)

    def update(self, val_loss: float, epoch: int, weights: Optional[ModelWeights] = None) -> bool:
        """Record one epoch; return True when training should stop."""
        if math.isnan(val_loss):
            raise FloatingPointError(f"validation loss is NaN at epoch {epoch}")
        if epoch <= self._last_epoch:
            raise ValueError(f"epochs must increase: got {epoch} after {self._last_epoch}")
        self._last_epoch = epoch
        if val_loss < self.best_loss:
            self.best_loss = float(val_loss)
            self.best_epoch = epoch
            self.epochs_since_improve = 0
            if weights is not None:
                self.best_checkpoint = copy_weights(weights)
        else:
            self.epochs_since_improve += 1
        stop = epoch >= self.min_epochs and self.epochs_since_improve >= self.patience
        if stop:
            self.stopped_epoch = epoch
        return stop
