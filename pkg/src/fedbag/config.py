"""Experiment configuration (JSON) and its validation.

Example::

    {
      "task": "classification",
      "scenarios": ["single_site:*", "centralized", "federated"],
      "alphas": [0, 0.001, 0.01, 0.1, 1.0],
      "model": {"d_proj": 512, "d_attn": 256, "dropout": 0.25},
      "optimizer": {"lr": 2e-4, "weight_decay": 1e-5},
      "beta": 0.15,
      "early_stopping": {"min_epochs": 35, "patience": 20},
      "max_rounds": 200,
      "synth": {"cases_per_site": [40, 60, 120, 180], "d_in": 32},
      "seed": 0,
      "n_jobs": 1,
      "out": "runs/brca"
    }

Exactly one of ``manifest`` (path to a manifest CSV) or ``synth`` (a
synthetic cohort spec) must be present. ``single_site:*`` expands to one
scenario per site.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from .data import SynthSpec, TASKS
from .federation import TrainConfig
from .losses import DEFAULT_BETA
from .model import DROPOUT_P
from .optim import DEFAULT_LR, DEFAULT_WEIGHT_DECAY, MIN_EPOCHS, PATIENCE

DEFAULT_ALPHAS = [0.0, 0.001, 0.01, 0.1, 1.0]
DEFAULT_SCENARIOS = ["single_site:*", "centralized", "federated"]
_SCENARIO_RE = re.compile(r"^(centralized|federated|single_site:(\*|\d+))$")

_SECTIONS = {
    "model": {"d_proj": 512, "d_attn": 256, "dropout": DROPOUT_P},
    "optimizer": {"lr": DEFAULT_LR, "weight_decay": DEFAULT_WEIGHT_DECAY},
    "early_stopping": {"min_epochs": MIN_EPOCHS, "patience": PATIENCE},
}
_TOP_LEVEL = {
    "task", "scenarios", "alphas", "model", "optimizer", "beta", "early_stopping",
    "max_rounds", "manifest", "synth", "seed", "n_jobs", "out", "reset_optimizer",
}


class ConfigError(ValueError):
    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class ExperimentConfig:
    task: str = "classification"
    scenarios: List[str] = field(default_factory=lambda: list(DEFAULT_SCENARIOS))
    alphas: List[float] = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    model: Dict[str, Any] = field(default_factory=lambda: dict(_SECTIONS["model"]))
    optimizer: Dict[str, Any] = field(default_factory=lambda: dict(_SECTIONS["optimizer"]))
    beta: float = DEFAULT_BETA
    early_stopping: Dict[str, Any] = field(default_factory=lambda: dict(_SECTIONS["early_stopping"]))
    max_rounds: int = 200
    manifest: Optional[str] = None
    synth: Optional[Dict[str, Any]] = None
    seed: int = 0
    n_jobs: int = 1
    out: Optional[str] = None
    reset_optimizer: bool = False

    def train_config(self, n_out: int, alpha: float = 0.0) -> TrainConfig:
        return TrainConfig(
            task=self.task, n_out=n_out,
            d_proj=int(self.model["d_proj"]), d_attn=int(self.model["d_attn"]),
            dropout=float(self.model["dropout"]),
            lr=float(self.optimizer["lr"]), weight_decay=float(self.optimizer["weight_decay"]),
            beta=float(self.beta), max_rounds=int(self.max_rounds),
            min_epochs=int(self.early_stopping["min_epochs"]),
            patience=int(self.early_stopping["patience"]),
            alpha=float(alpha), seed=int(self.seed), n_jobs=int(self.n_jobs),
            reset_optimizer=bool(self.reset_optimizer),
        )

    def synth_spec(self) -> SynthSpec:
        spec = dict(self.synth or {})
        spec.setdefault("task", self.task)
        spec.setdefault("seed", self.seed)
        return SynthSpec.from_dict(spec)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def validate_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    """Fill defaults and check every field, reporting all problems at once."""
    errors: List[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    for key in sorted(set(raw) - _TOP_LEVEL):
        errors.append(f"{key}: unknown field")

    cfg = ExperimentConfig()
    for section, defaults in _SECTIONS.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            errors.append(f"{section}: expected an object")
            continue
        for key in sorted(set(given) - set(defaults)):
            errors.append(f"{section}.{key}: unknown field")
        merged = dict(defaults)
        merged.update({k: v for k, v in given.items() if k in defaults})
        setattr(cfg, section, merged)

    for key in ("task", "scenarios", "alphas", "beta", "max_rounds", "manifest", "synth",
                "seed", "n_jobs", "out", "reset_optimizer"):
        if key in raw:
            setattr(cfg, key, raw[key])

    if cfg.task not in TASKS:
        errors.append(f"task: must be one of {list(TASKS)}, got {cfg.task!r}")
    if not isinstance(cfg.scenarios, list) or not cfg.scenarios:
        errors.append("scenarios: expected a non-empty list")
    else:
        for i, sc in enumerate(cfg.scenarios):
            if not isinstance(sc, str) or not _SCENARIO_RE.match(sc):
                errors.append(f"scenarios[{i}]: {sc!r} is not centralized, federated or single_site:<id>")
    if not isinstance(cfg.alphas, list) or not cfg.alphas:
        errors.append("alphas: expected a non-empty list")
    else:
        for i, a in enumerate(cfg.alphas):
            if not _is_number(a) or a < 0:
                errors.append(f"alphas[{i}]: alpha must be a number >= 0, got {a!r}")
    for key in ("d_proj", "d_attn"):
        if not _is_int(cfg.model[key]) or cfg.model[key] < 1:
            errors.append(f"model.{key}: must be a positive integer")
    if not _is_number(cfg.model["dropout"]) or not 0 <= cfg.model["dropout"] < 1:
        errors.append("model.dropout: must lie in [0, 1)")
    for key in ("lr", "weight_decay"):
        if not _is_number(cfg.optimizer[key]) or cfg.optimizer[key] < 0:
            errors.append(f"optimizer.{key}: must be a number >= 0")
    for key in ("min_epochs", "patience"):
        if not _is_int(cfg.early_stopping[key]) or cfg.early_stopping[key] < 0:
            errors.append(f"early_stopping.{key}: must be a non-negative integer")
    if not _is_number(cfg.beta) or not 0 <= cfg.beta <= 1:
        errors.append("beta: must lie in [0, 1]")
    if not _is_int(cfg.max_rounds) or cfg.max_rounds < 0:
        errors.append("max_rounds: must be a non-negative integer")
    if not _is_int(cfg.seed) or cfg.seed < 0:
        errors.append("seed: must be a non-negative integer")
    if not _is_int(cfg.n_jobs) or cfg.n_jobs < 1:
        errors.append("n_jobs: must be a positive integer")
    if not isinstance(cfg.reset_optimizer, bool):
        errors.append("reset_optimizer: must be true or false")

    if cfg.manifest is not None and cfg.synth is not None:
        errors.append("manifest/synth: conflict, give exactly one dataset source")
    elif cfg.manifest is None and cfg.synth is None:
        errors.append("manifest/synth: missing dataset source")
    elif cfg.manifest is not None and not isinstance(cfg.manifest, str):
        errors.append("manifest: expected a path string")
    elif cfg.synth is not None:
        if not isinstance(cfg.synth, dict):
            errors.append("synth: expected an object")
        elif cfg.task in TASKS and _is_int(cfg.seed) and cfg.seed >= 0:
            try:
                cfg.synth_spec()
            except (TypeError, ValueError) as exc:
                errors.append(f"synth: {exc}")
    if errors:
        raise ConfigError(errors)
    return cfg


def validate_config(path, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Load a JSON config file, apply flag overrides, validate."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from exc
    if isinstance(raw, dict):
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        if isinstance(raw.get("manifest"), str) and not Path(raw["manifest"]).is_absolute():
            raw["manifest"] = str(path.parent / raw["manifest"])
    return validate_dict(raw)
