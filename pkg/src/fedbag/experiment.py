"""Scenario sweeps and their output files.

``run`` writes into the output directory:

* ``report.json``      config echo, per-run round logs and test reports
* ``metrics.csv``      one row per scenario (federated: one per alpha)
* ``loss_curves.csv``  train/validation loss per round for every run
* ``roc_points.csv`` or ``km_curves.csv`` for external plotting
* ``checkpoints/<run>.fbag`` best global weights of every run
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .config import ExperimentConfig
from .data import N_BINS, Dataset, FeatureBag, generate_synthetic, load_dataset
from .federation import evaluate, predict_proba, train_scenario
from .metrics import ClassificationReport, roc_curve_points
from .model import ModelWeights, forward_bag
from .serialization import save_checkpoint

logger = logging.getLogger(__name__)

CLASSIFICATION_COLUMNS = ["scenario", "alpha", "auc", "auc_lo", "auc_hi", "error", "bacc", "f1", "mAP", "kappa"]
SURVIVAL_COLUMNS = ["scenario", "alpha", "c_index", "logrank_stat", "logrank_p"]


def load_experiment_data(config: ExperimentConfig) -> Dataset:
    if config.manifest is not None:
        dataset = load_dataset(config.manifest)
        if dataset.task != config.task:
            raise ValueError(f"manifest task {dataset.task!r} does not match config task {config.task!r}")
        return dataset
    return generate_synthetic(config.synth_spec())


def expand_runs(scenarios: Sequence[str], alphas: Sequence[float], site_ids: Sequence[int]) -> List[tuple]:
    """``(scenario, alpha)`` pairs; alpha is None for runs that ignore it."""
    runs = []
    for sc in scenarios:
        if sc == "single_site:*":
            runs.extend((f"single_site:{s}", None) for s in site_ids)
        elif sc == "federated":
            runs.extend(("federated", float(a)) for a in alphas)
        else:
            runs.append((sc, None))
    return runs


def run_name(scenario: str, alpha: Optional[float]) -> str:
    name = scenario.replace(":", "_")
    return name if alpha is None else f"{name}_alpha{alpha:g}"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "nan" if np.isnan(x) else repr(x)
    return str(x)


def run(config: ExperimentConfig, out_dir=None) -> dict:
    out = Path(out_dir or config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)

    dataset = load_experiment_data(config)
    for sc in config.scenarios:
        if sc.startswith("single_site:") and sc != "single_site:*" and int(sc.split(":")[1]) not in dataset.sites:
            raise ValueError(f"scenario {sc}: unknown site; dataset has sites {dataset.site_ids}")
    test = dataset.pooled("test")
    if not test:
        raise ValueError("dataset has no test bags")
    n_out = dataset.n_classes if config.task == "classification" else N_BINS

    runs = []
    table = []
    curves: List[list] = []
    plots: List[list] = []
    for scenario, alpha in expand_runs(config.scenarios, config.alphas, dataset.site_ids):
        name = run_name(scenario, alpha)
        logger.info("running %s", name)
        tc = config.train_config(n_out, alpha or 0.0)
        weights, history = train_scenario(dataset, scenario, tc)
        save_checkpoint(out / "checkpoints" / f"{name}.fbag", weights)
        report = evaluate(weights, test, config.task)
        runs.append({
            "name": name, "scenario": scenario, "alpha": alpha,
            "history": history.to_dict(), "test": report.to_dict(),
        })
        for r in history.rounds:
            mean_train = float(np.mean(list(r.train_loss.values())))
            curves.append([name, r.round, _fmt(mean_train), _fmt(r.val_loss)])
        if isinstance(report, ClassificationReport):
            table.append([scenario, _fmt(alpha), *map(_fmt, [
                report.auc, report.auc_lo, report.auc_hi, report.error, report.balanced_accuracy,
                report.f1, report.mean_average_precision, report.kappa])])
            pts = roc_curve_points(predict_proba(weights, test), [b.label for b in test])
            plots.extend([name, _fmt(f), _fmt(t)] for f, t, _ in pts)
        else:
            table.append([scenario, _fmt(alpha), _fmt(report.c_index), _fmt(report.logrank_statistic),
                          _fmt(report.p_value)])
            for group, curve in (("low", report.km_low), ("high", report.km_high)):
                if curve is not None:
                    plots.extend([name, group, _fmt(t), _fmt(s)] for t, s in zip(*curve))

    columns = CLASSIFICATION_COLUMNS if config.task == "classification" else SURVIVAL_COLUMNS
    _write_csv(out / "metrics.csv", columns, table)
    _write_csv(out / "loss_curves.csv", ["run", "round", "train_loss", "val_loss"], curves)
    if config.task == "classification":
        _write_csv(out / "roc_points.csv", ["run", "fpr", "tpr"], plots)
    else:
        _write_csv(out / "km_curves.csv", ["run", "group", "time", "survival"], plots)

    report = {"config": config.to_dict(), "cuts": dataset.cuts, "runs": runs}
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, allow_nan=True)
    return report


def _write_csv(path: Path, header: List[str], rows: List[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def percentile_scores(scores) -> np.ndarray:
    """Rank-based percentile in [0, 1] within one bag; tied scores share their average rank."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 1:
        return np.array([0.5])
    return (rankdata(scores, method="average") - 1.0) / (scores.size - 1)


def export_attention(weights: ModelWeights, bags: Sequence[FeatureBag], path) -> int:
    """Write per-instance attention and within-bag percentiles; returns rows written."""
    if not bags:
        raise ValueError("no bags to export attention for")
    rows: List[list] = []
    for bag in bags:
        A = forward_bag(weights, bag.features).A
        for m, (a, p) in enumerate(zip(A, percentile_scores(A))):
            rows.append([bag.bag_id, m, repr(float(a)), repr(float(p))])
    _write_csv(Path(path), ["bag_id", "instance", "attention", "percentile"], rows)
    return len(rows)
