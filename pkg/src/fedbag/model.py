"""Gated-attention MIL network over feature bags.

The network has three stages:

* projection: ``H = relu(X @ W_proj.T + b_proj)``
* gated attention: ``e_m = w_a . (tanh(V_a h_m + b_V) * sigm(U_a h_m + b_U)) + b_a``,
  ``A = softmax(e)`` over the instances of the bag, ``h_bag = A @ H``
* prediction: ``s = W_pred @ h_bag + b_pred``

Weights are stored as a plain ``dict`` mapping canonical tensor names to
float64 arrays. Gradients are derived by hand for this architecture only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy.stats import truncnorm

from .rng import stream

ModelWeights = Dict[str, np.ndarray]
Gradients = Dict[str, np.ndarray]

PARAM_NAMES = (
    "proj.weight",
    "proj.bias",
    "attn_v.weight",
    "attn_v.bias",
    "attn_u.weight",
    "attn_u.bias",
    "attn_w.weight",
    "attn_w.bias",
    "pred.weight",
    "pred.bias",
)

# ReLU after the projection layer; tests switch it off to isolate the linear path.
PROJECT_RELU = True
DROPOUT_P = 0.25
INIT_TRUNCATION = 2.0


class EmptyBagError(ValueError):
    """Raised when a bag has no instances."""


@dataclass(frozen=True)
class ModelDims:
    d_in: int = 1024
    d_proj: int = 512
    d_attn: int = 256
    n_out: int = 2

    def __post_init__(self):
        for name in ("d_in", "d_proj", "d_attn", "n_out"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    def shapes(self) -> Dict[str, tuple]:
        return {
            "proj.weight": (self.d_proj, self.d_in),
            "proj.bias": (self.d_proj,),
            "attn_v.weight": (self.d_attn, self.d_proj),
            "attn_v.bias": (self.d_attn,),
            "attn_u.weight": (self.d_attn, self.d_proj),
            "attn_u.bias": (self.d_attn,),
            "attn_w.weight": (1, self.d_attn),
            "attn_w.bias": (1,),
            "pred.weight": (self.n_out, self.d_proj),
            "pred.bias": (self.n_out,),
        }


def dims_from_weights(weights: ModelWeights) -> ModelDims:
    d_proj, d_in = weights["proj.weight"].shape
    d_attn = weights["attn_v.weight"].shape[0]
    n_out = weights["pred.weight"].shape[0]
    return ModelDims(d_in, d_proj, d_attn, n_out)


def check_weights(weights: ModelWeights, dims: Optional[ModelDims] = None) -> ModelDims:
    """Validate names, order, shapes and finiteness; return the implied dims."""
    if tuple(weights) != PARAM_NAMES:
        raise ValueError(f"weight names must be {PARAM_NAMES}, got {tuple(weights)}")
    dims = dims or dims_from_weights(weights)
    for name, shape in dims.shapes().items():
        if weights[name].shape != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {weights[name].shape}")
        if not np.all(np.isfinite(weights[name])):
            raise ValueError(f"{name}: non-finite entries")
    return dims


def init_std(fan_in: int) -> float:
    """Standard deviation of the untruncated initializer, ``sqrt(2 / fan_in)``."""
    return float(np.sqrt(2.0 / fan_in))


def init_weights(dims: ModelDims, seed: int = 0) -> ModelWeights:
    """He-normal weights truncated at two standard deviations, zero biases."""
    weights: ModelWeights = {}
    for name, shape in dims.shapes().items():
        if name.endswith(".bias"):
            weights[name] = np.zeros(shape)
            continue
        std = init_std(shape[1])
        rng = stream(seed, "init", name)
        weights[name] = truncnorm.rvs(
            -INIT_TRUNCATION, INIT_TRUNCATION, scale=std, size=shape, random_state=rng
        )
    return weights


def zeros_like_weights(weights: ModelWeights) -> ModelWeights:
    return {name: np.zeros_like(w) for name, w in weights.items()}


def copy_weights(weights: ModelWeights) -> ModelWeights:
    return {name: np.array(w, copy=True) for name, w in weights.items()}


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(e):
    z = np.exp(e - e.max())
    return z / z.sum()


def _check_bag(bag) -> np.ndarray:
    X = np.asarray(bag, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"a bag must be a 2-D (instances x features) array, got ndim={X.ndim}")
    if X.shape[0] == 0:
        raise EmptyBagError("bag has no instances")
    if not np.all(np.isfinite(X)):
        raise ValueError("bag contains non-finite values")
    return X


def _gate(weights: ModelWeights, H: np.ndarray):
    pre_t = H @ weights["attn_v.weight"].T + weights["attn_v.bias"]
    pre_g = H @ weights["attn_u.weight"].T + weights["attn_u.bias"]
    return np.tanh(pre_t), _sigmoid(pre_g)


def attention_scores(weights: ModelWeights, H) -> np.ndarray:
    """Softmax attention over the rows of the projected bag ``H`` (eval mode)."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] == 0:
        raise EmptyBagError("attention needs at least one instance")
    t, g = _gate(weights, H)
    e = (t * g) @ weights["attn_w.weight"][0] + weights["attn_w.bias"][0]
    return _softmax(e)


def attn_pool(A, H) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if A.ndim != 1 or H.ndim != 2 or A.shape[0] != H.shape[0]:
        raise ValueError(f"attention of shape {A.shape} does not match instances {H.shape}")
    return A @ H


@dataclass
class ForwardTrace:
    """Everything the backward pass needs from one forward evaluation."""

    X: np.ndarray
    Z: np.ndarray
    H: np.ndarray
    t: np.ndarray
    g: np.ndarray
    mask_t: Optional[np.ndarray]
    mask_g: Optional[np.ndarray]
    gated: np.ndarray
    e: np.ndarray
    A: np.ndarray
    h_bag: np.ndarray
    s: np.ndarray
    dims: ModelDims
    project_relu: bool = True
    train: bool = False

    @property
    def dropout_mask(self) -> Optional[tuple]:
        if self.mask_t is None:
            return None
        return self.mask_t, self.mask_g


def dropout_masks(rng: np.random.Generator, shape, p: float = DROPOUT_P):
    """Inverted-dropout masks for the tanh and sigmoid branches."""
    keep = 1.0 - p
    mask_t = (rng.random(shape) < keep) / keep
    mask_g = (rng.random(shape) < keep) / keep
    return mask_t, mask_g


def forward_bag(
    weights: ModelWeights,
    bag,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
    dropout: float = DROPOUT_P,
    masks: Optional[tuple] = None,
    project_relu: Optional[bool] = None,
) -> ForwardTrace:
    """Run one bag through the network.

    In train mode dropout is applied to both gate branches of the attention
    network, using ``masks`` if given or drawing them from ``rng``. Eval mode
    is deterministic.
    """
    X = _check_bag(bag)
    dims = dims_from_weights(weights)
    if X.shape[1] != dims.d_in:
        raise ValueError(f"bag has {X.shape[1]} features, model expects {dims.d_in}")
    relu = PROJECT_RELU if project_relu is None else project_relu

    Z = X @ weights["proj.weight"].T + weights["proj.bias"]
    H = np.maximum(Z, 0.0) if relu else Z
    t, g = _gate(weights, H)

    mask_t = mask_g = None
    if train and (masks is not None or dropout > 0):
        if masks is None:
            if rng is None:
                raise ValueError("train mode with dropout needs an rng")
            masks = dropout_masks(rng, t.shape, dropout)
        mask_t, mask_g = masks
        gated = (t * mask_t) * (g * mask_g)
    else:
        gated = t * g

    e = gated @ weights["attn_w.weight"][0] + weights["attn_w.bias"][0]
    A = _softmax(e)
    h_bag = A @ H
    s = weights["pred.weight"] @ h_bag + weights["pred.bias"]
    return ForwardTrace(
        X=X, Z=Z, H=H, t=t, g=g, mask_t=mask_t, mask_g=mask_g, gated=gated, e=e,
        A=A, h_bag=h_bag, s=s, dims=dims, project_relu=relu, train=train,
    )


def backward_bag(weights: ModelWeights, trace: ForwardTrace, ds) -> Gradients:
    """Exact gradient of a loss w.r.t. every weight, given ``dLoss/ds``."""
    ds = np.asarray(ds, dtype=np.float64)
    if dims_from_weights(weights) != trace.dims:
        raise ValueError("trace was produced with weights of different shapes")
    if ds.shape != (trace.dims.n_out,):
        raise ValueError(f"dLoss/ds must have shape ({trace.dims.n_out},), got {ds.shape}")

    H, A = trace.H, trace.A
    grads: Gradients = {}

    dh_bag = weights["pred.weight"].T @ ds
    dA = H @ dh_bag
    de = A * (dA - A @ dA)
    dH = np.outer(A, dh_bag)

    w_a = weights["attn_w.weight"][0]
    dgated = np.outer(de, w_a)
    if trace.mask_t is not None:
        t_eff, g_eff = trace.t * trace.mask_t, trace.g * trace.mask_g
        dt = dgated * g_eff * trace.mask_t
        dg = dgated * t_eff * trace.mask_g
    else:
        dt = dgated * trace.g
        dg = dgated * trace.t
    dpre_t = dt * (1.0 - trace.t**2)
    dpre_g = dg * trace.g * (1.0 - trace.g)
    dH += dpre_t @ weights["attn_v.weight"] + dpre_g @ weights["attn_u.weight"]

    dZ = dH * (trace.Z > 0) if trace.project_relu else dH

    grads["proj.weight"] = dZ.T @ trace.X
    grads["proj.bias"] = dZ.sum(axis=0)
    grads["attn_v.weight"] = dpre_t.T @ H
    grads["attn_v.bias"] = dpre_t.sum(axis=0)
    grads["attn_u.weight"] = dpre_g.T @ H
    grads["attn_u.bias"] = dpre_g.sum(axis=0)
    grads["attn_w.weight"] = (de @ trace.gated)[None, :]
    grads["attn_w.bias"] = np.array([de.sum()])
    grads["pred.weight"] = np.outer(ds, trace.h_bag)
    grads["pred.bias"] = ds.copy()
    return grads


def predict_logits(weights: ModelWeights, bags) -> np.ndarray:
    """Eval-mode logits for a sequence of bags, shape ``(n_bags, n_out)``."""
    return np.array([forward_bag(weights, b).s for b in bags])
