"""Feature bags: synthetic generation, splitting, survival discretization and
manifest-based persistence.

A manifest is a CSV with header::

    bag_id,site_id,split,task,label,censorship,time,path

Relative paths resolve against the manifest's directory. Survival manifests
carry their cut points in a sidecar ``<manifest stem>.cuts.json`` holding
``{"cuts": [t1, t2, t3]}``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .losses import SurvivalLabel
from .rng import stream
from .serialization import load_bag, save_bag

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
TASKS = ("classification", "survival")
MANIFEST_HEADER = ["bag_id", "site_id", "split", "task", "label", "censorship", "time", "path"]
DEFAULT_FRACTIONS = (0.7, 0.15, 0.15)
N_BINS = 4


class ManifestError(ValueError):
    """A manifest violates one of its invariants."""


class DiscretizationError(ValueError):
    pass


@dataclass
class FeatureBag:
    """One weakly-labelled example: an ``(M, d_in)`` instance matrix.

    ``label`` is the class index for classification and the discrete time bin
    for survival (``-1`` until discretized).
    """

    bag_id: str
    site_id: int
    features: np.ndarray
    label: int = -1
    censorship: int = 0
    time: float = math.nan
    patient_id: Optional[str] = None

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"bag {self.bag_id}: features must be (M>=1, d_in), got {self.features.shape}")

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    def target(self, task: str):
        if task == "classification":
            return int(self.label)
        if self.label < 0:
            raise ValueError(f"bag {self.bag_id} has no discretized survival bin")
        return SurvivalLabel(int(self.label), int(self.censorship), float(self.time))


@dataclass
class SiteData:
    site_id: int
    train: List[FeatureBag] = field(default_factory=list)
    val: List[FeatureBag] = field(default_factory=list)
    test: List[FeatureBag] = field(default_factory=list)


@dataclass
class Dataset:
    task: str
    sites: Dict[int, SiteData]
    cuts: Optional[List[float]] = None
    n_classes: int = 2

    @property
    def site_ids(self) -> List[int]:
        return sorted(self.sites)

    def pooled(self, split: str) -> List[FeatureBag]:
        return [b for sid in self.site_ids for b in getattr(self.sites[sid], split)]


# --------------------------------------------------------------------------
# survival discretization


def discretize_survival(times, censorship, n_bins: int = N_BINS) -> Tuple[np.ndarray, np.ndarray]:
    """Quantile cut points of the uncensored times and the bin of every case.

    Bin ``r`` covers ``[t_r, t_{r+1})`` with ``t_0 = 0`` and ``t_R = inf``.
    """
    times = np.asarray(times, dtype=np.float64)
    censorship = np.asarray(censorship, dtype=int)
    if np.any(times < 0):
        raise DiscretizationError("survival times must be non-negative")
    events = times[censorship == 0]
    if events.size < n_bins:
        raise DiscretizationError(f"need at least {n_bins} uncensored cases, got {events.size}")
    qs = np.arange(1, n_bins) / n_bins
    cuts = np.quantile(events, qs, method="linear")
    if np.any(np.diff(cuts) <= 0):
        raise DiscretizationError(f"non-increasing cut points {cuts.tolist()}")
    return cuts, assign_bins(times, cuts)


def assign_bins(times, cuts) -> np.ndarray:
    return np.searchsorted(np.asarray(cuts), np.asarray(times, dtype=np.float64), side="right")


# --------------------------------------------------------------------------
# stratified splitting


def _allocate(n: int, fractions: Sequence[float]) -> List[int]:
    """Largest-remainder allocation of ``n`` items to the given fractions."""
    raw = [n * f for f in fractions]
    counts = [int(math.floor(r + 1e-9)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def stratified_split(
    site_ids,
    strata,
    seed: int,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    groups=None,
    sites: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Assign every case to train/val/test.

    Allocation happens independently within each (site, stratum) cell; cases
    sharing a ``groups`` value (e.g. slides of one patient) move together and
    the group's stratum is that of its first case.
    """
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9) or len(fractions) != 3:
        raise ValueError(f"fractions must be three values summing to 1, got {fractions}")
    site_ids = np.asarray(site_ids)
    strata = [str(s) for s in strata]
    n = len(strata)
    groups = [str(i) for i in range(n)] if groups is None else [str(g) for g in groups]
    if sites is not None:
        empty = sorted(set(sites) - set(site_ids.tolist()))
        if empty:
            raise ValueError(f"sites without any cases: {empty}")

    members: Dict[Tuple[int, str], List[int]] = {}
    group_key: Dict[Tuple[int, str], str] = {}
    for i in range(n):
        key = (int(site_ids[i]), groups[i])
        if key not in members:
            members[key] = []
            group_key[key] = strata[i]
        members[key].append(i)

    cells: Dict[Tuple[int, str], List[str]] = {}
    for (sid, grp), stratum in group_key.items():
        cells.setdefault((sid, stratum), []).append(grp)

    out = np.empty(n, dtype=object)
    for (sid, stratum), grps in sorted(cells.items()):
        grps = sorted(grps)
        if len(grps) < len(SPLITS):
            logger.debug("site %s stratum %s has only %d case(s)", sid, stratum, len(grps))
        perm = stream(seed, "split", sid, stratum).permutation(len(grps))
        counts = _allocate(len(grps), fractions)
        bounds = np.cumsum([0] + counts)
        for k, split in enumerate(SPLITS):
            for j in perm[bounds[k] : bounds[k + 1]]:
                out[members[(sid, grps[j])]] = split
    return out


# --------------------------------------------------------------------------
# synthetic cohorts


@dataclass
class SynthSpec:
    """Parameters of a synthetic multi-site cohort.

    Classification bags contain ``signal_fraction`` instances drawn around
    the class direction, the rest pure noise. Survival bags carry a latent
    risk ``z ~ N(0, 1)`` that scales the signal instances and sets an
    exponential event time with rate ``base_rate * exp(risk_effect * z)``.
    Every instance of site ``i`` is then mapped to ``site_scale_i * x + site_offset_i``.
    """

    task: str = "classification"
    cases_per_site: Sequence[int] = (100, 100)
    class_proportions: Sequence[float] = (0.5, 0.5)
    site_class_proportions: Optional[Sequence[Sequence[float]]] = None
    censor_fraction: float = 0.3
    d_in: int = 32
    signal_strength: float = 1.0
    noise_std: float = 1.0
    site_shift: float = 0.5
    site_offsets: Optional[Sequence[Sequence[float]]] = None
    site_scales: Optional[Sequence[float]] = None
    bag_size: Tuple[int, int] = (8, 24)
    signal_fraction: float = 0.2
    slides_per_patient: Tuple[int, int] = (1, 1)
    base_rate: float = 0.05
    risk_effect: float = 1.0
    fractions: Sequence[float] = DEFAULT_FRACTIONS
    seed: int = 0

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self) -> List[str]:
        errors = []
        if self.task not in TASKS:
            errors.append(f"task must be one of {TASKS}")
        if not self.cases_per_site or any(int(c) < 1 for c in self.cases_per_site):
            errors.append("every site needs at least one case")
        props = [self.class_proportions] + list(self.site_class_proportions or [])
        for p in props:
            if any(x < 0 for x in p) or not math.isclose(sum(p), 1.0, abs_tol=1e-9):
                errors.append(f"class proportions {list(p)} must be non-negative and sum to 1")
        if self.site_class_proportions is not None and len(self.site_class_proportions) != len(self.cases_per_site):
            errors.append("site_class_proportions needs one entry per site")
        if not 0 <= self.censor_fraction < 1:
            errors.append("censor_fraction must lie in [0, 1)")
        lo, hi = self.bag_size
        if lo < 1 or hi < lo:
            errors.append(f"bag_size range {self.bag_size} invalid (need 1 <= min <= max)")
        if not 0 < self.signal_fraction <= 1:
            errors.append("signal_fraction must lie in (0, 1]")
        if self.d_in < 1:
            errors.append("d_in must be >= 1")
        if self.site_offsets is not None and (
            len(self.site_offsets) != len(self.cases_per_site)
            or any(len(o) != self.d_in for o in self.site_offsets)
        ):
            errors.append("site_offsets needs one d_in-vector per site")
        if self.site_scales is not None and len(self.site_scales) != len(self.cases_per_site):
            errors.append("site_scales needs one entry per site")
        return errors

    @property
    def n_sites(self) -> int:
        return len(self.cases_per_site)

    @property
    def n_classes(self) -> int:
        return len(self.class_proportions) if self.task == "classification" else N_BINS

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        for key in ("bag_size", "slides_per_patient"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        out = {}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            if isinstance(v, tuple):
                v = list(v)
            out[k] = v
        return out


def _site_geometry(spec: SynthSpec):
    offsets, scales = [], []
    for i in range(spec.n_sites):
        if spec.site_offsets is not None:
            offsets.append(np.asarray(spec.site_offsets[i], dtype=np.float64))
        else:
            rng = stream(spec.seed, "synth", "site", i)
            offsets.append(rng.normal(size=spec.d_in) * spec.site_shift / math.sqrt(spec.d_in))
        scales.append(1.0 if spec.site_scales is None else float(spec.site_scales[i]))
    return offsets, scales


def _directions(spec: SynthSpec, k: int) -> np.ndarray:
    rng = stream(spec.seed, "synth", "directions")
    D = rng.normal(size=(k, spec.d_in))
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    return D * spec.signal_strength


def _slide(rng, spec: SynthSpec, center: np.ndarray, offset, scale) -> np.ndarray:
    M = int(rng.integers(spec.bag_size[0], spec.bag_size[1] + 1))
    n_sig = max(1, int(round(spec.signal_fraction * M)))
    X = rng.normal(scale=spec.noise_std, size=(M, spec.d_in))
    X[:n_sig] += center
    X = X[rng.permutation(M)]
    return (scale * X + offset).astype(np.float32)


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Build a split, discretized multi-site dataset from ``spec``."""
    offsets, scales = _site_geometry(spec)
    classification = spec.task == "classification"
    directions = _directions(spec, len(spec.class_proportions) if classification else 1)

    bags: List[FeatureBag] = []
    counter = 0
    for site in range(spec.n_sites):
        props = spec.class_proportions
        if classification and spec.site_class_proportions is not None:
            props = spec.site_class_proportions[site]
        for j in range(int(spec.cases_per_site[site])):
            rng = stream(spec.seed, "synth", "bag", counter)
            counter += 1
            bag_id = f"s{site}_p{j:04d}"
            if classification:
                label = int(rng.choice(len(props), p=props))
                X = _slide(rng, spec, directions[label], offsets[site], scales[site])
                bags.append(FeatureBag(bag_id, site, X, label=label, patient_id=bag_id))
                continue
            z = rng.normal()
            n_slides = int(rng.integers(spec.slides_per_patient[0], spec.slides_per_patient[1] + 1))
            X = np.concatenate(
                [_slide(rng, spec, z * directions[0], offsets[site], scales[site]) for _ in range(n_slides)]
            )
            t_event = rng.exponential(1.0 / (spec.base_rate * math.exp(spec.risk_effect * z)))
            censored = int(rng.random() < spec.censor_fraction)
            t_obs = t_event * rng.random() if censored else t_event
            bags.append(FeatureBag(bag_id, site, X, censorship=censored, time=float(t_obs), patient_id=bag_id))

    site_ids = [b.site_id for b in bags]
    cuts = None
    if classification:
        strata = [b.label for b in bags]
    else:
        # provisional bins only drive stratification; final cuts use the training split
        times = [b.time for b in bags]
        cens = [b.censorship for b in bags]
        _, provisional = discretize_survival(times, cens)
        strata = [f"{r}_{c}" for r, c in zip(provisional, cens)]
    splits = stratified_split(site_ids, strata, spec.seed, spec.fractions, groups=[b.patient_id for b in bags])
    dataset = Dataset(spec.task, {s: SiteData(s) for s in range(spec.n_sites)}, n_classes=spec.n_classes)
    for bag, split in zip(bags, splits):
        getattr(dataset.sites[bag.site_id], split).append(bag)

    if not classification:
        train = dataset.pooled("train")
        cuts, _ = discretize_survival([b.time for b in train], [b.censorship for b in train])
        for bag in bags:
            bag.label = int(assign_bins([bag.time], cuts)[0])
        dataset.cuts = [float(c) for c in cuts]
    return dataset


# --------------------------------------------------------------------------
# manifests


@dataclass
class ManifestRecord:
    bag_id: str
    site_id: int
    split: str
    task: str
    label: int
    censorship: int
    time: float
    path: str


def _cuts_path(manifest_path: Path) -> Path:
    return manifest_path.with_name(manifest_path.stem + ".cuts.json")


def write_dataset(dataset: Dataset, out_dir) -> Path:
    """Save every bag as ``bags/<bag_id>.bag`` plus ``manifest.csv``; return the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "bags").mkdir(parents=True, exist_ok=True)
    records = []
    for sid in dataset.site_ids:
        for split in SPLITS:
            for bag in getattr(dataset.sites[sid], split):
                rel = f"bags/{bag.bag_id}.bag"
                save_bag(bag.features, out_dir / rel)
                records.append(
                    ManifestRecord(bag.bag_id, sid, split, dataset.task, bag.label, bag.censorship, bag.time, rel)
                )
    path = out_dir / "manifest.csv"
    write_manifest(path, records, dataset.cuts)
    return path


def write_manifest(path, records: Sequence[ManifestRecord], cuts=None) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in records:
            time = "" if r.time is None or math.isnan(r.time) else repr(float(r.time))
            writer.writerow([r.bag_id, r.site_id, r.split, r.task, r.label, r.censorship, time, r.path])
    if cuts is not None:
        with open(_cuts_path(path), "w", encoding="utf-8") as fh:
            json.dump({"cuts": [float(c) for c in cuts]}, fh)


def read_manifest(path) -> Tuple[List[ManifestRecord], Optional[List[float]]]:
    """Parse and validate a manifest; all violations are reported together."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames[: len(MANIFEST_HEADER)]) != MANIFEST_HEADER:
            raise ManifestError(f"{path}: header must start with {','.join(MANIFEST_HEADER)}")
        rows = list(reader)

    errors, records, seen, missing = [], [], set(), []
    for lineno, row in enumerate(rows, start=2):
        try:
            rec = ManifestRecord(
                bag_id=row["bag_id"],
                site_id=int(row["site_id"]),
                split=row["split"],
                task=row["task"],
                label=int(row["label"]),
                censorship=int(row["censorship"] or 0),
                time=float(row["time"]) if row["time"] else math.nan,
                path=row["path"],
            )
        except (TypeError, ValueError) as exc:
            errors.append(f"line {lineno}: {exc}")
            continue
        if rec.bag_id in seen:
            errors.append(f"line {lineno}: duplicate bag_id {rec.bag_id}")
        seen.add(rec.bag_id)
        if rec.split not in SPLITS:
            errors.append(f"line {lineno}: split {rec.split!r} not in {SPLITS}")
        if rec.task not in TASKS:
            errors.append(f"line {lineno}: task {rec.task!r} not in {TASKS}")
        if rec.censorship not in (0, 1):
            errors.append(f"line {lineno}: censorship must be 0 or 1")
        full = Path(rec.path) if os.path.isabs(rec.path) else path.parent / rec.path
        if not full.exists():
            missing.append(rec.bag_id)
        rec.path = str(full)
        records.append(rec)
    if missing:
        errors.append(f"bag files missing for bag_id(s): {', '.join(missing)}")
    if len({r.task for r in records}) > 1:
        errors.append("manifest mixes tasks")
    if errors:
        raise ManifestError(f"{path}: " + "; ".join(errors))

    cuts = None
    cuts_file = _cuts_path(path)
    if cuts_file.exists():
        with open(cuts_file, encoding="utf-8") as fh:
            cuts = [float(c) for c in json.load(fh)["cuts"]]
    return records, cuts


def load_dataset(manifest_path) -> Dataset:
    records, cuts = read_manifest(manifest_path)
    if not records:
        raise ManifestError(f"{manifest_path}: no records")
    task = records[0].task
    sites: Dict[int, SiteData] = {}
    for rec in records:
        X = load_bag(rec.path)
        bag = FeatureBag(rec.bag_id, rec.site_id, X, rec.label, rec.censorship, rec.time, rec.bag_id)
        getattr(sites.setdefault(rec.site_id, SiteData(rec.site_id)), rec.split).append(bag)
    if task == "survival" and cuts is None:
        train = [b for s in sites.values() for b in s.train]
        cuts_arr, _ = discretize_survival([b.time for b in train], [b.censorship for b in train])
        cuts = [float(c) for c in cuts_arr]
        for s in sites.values():
            for split in SPLITS:
                for b in getattr(s, split):
                    b.label = int(assign_bins([b.time], cuts)[0])
    if task == "classification":
        n_classes = max(2, max(r.label for r in records) + 1)
    else:
        n_classes = N_BINS
    return Dataset(task, sites, cuts, n_classes=n_classes)
