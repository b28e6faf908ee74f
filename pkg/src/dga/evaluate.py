"""Victim retraining on (poisoned) graphs and attack statistics."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.stats import ks_2samp

from .defense import jaccard_filter, jaccard_similarity
from .gcn import TrainingDivergedError, accuracy, forward, train_gcn
from .graph import Graph, degree_distribution, gcn_normalize

log = logging.getLogger(__name__)

VICTIM_HYPER = {"lr": 1e-2, "weight_decay": 5e-4, "epochs": 200, "hidden": 16, "dropout": 0.5}


@dataclass
class EvalReport:
    accuracies: list
    mean: float
    std: float
    runs: int
    seeds: list
    method: str = "clean"
    budget_rate: float = 0.0
    budget: int = 0
    defense: str = "none"
    seed: Optional[int] = None
    std_defined: bool = True
    failed_runs: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @classmethod
    def from_accuracies(cls, accs, seeds, **meta):
        accs = [float(a) for a in accs]
        mean = float(np.mean(accs)) if accs else float("nan")
        std = float(np.std(accs)) if len(accs) >= 2 else 0.0
        return cls(accuracies=accs, mean=mean, std=std, runs=len(accs), seeds=list(seeds),
                   std_defined=len(accs) >= 2, **meta)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj) -> "EvalReport":
        return cls(**obj)


def train_victim(g: Graph, features, labels, split, seed, hyper=None):
    h = dict(VICTIM_HYPER)
    h.update(hyper or {})
    a_hat = gcn_normalize(g.sparse_adjacency())
    params = train_gcn(a_hat, features, labels, split, h, rng=np.random.default_rng(seed))
    return params, a_hat


def evaluate_victim(poisoned: Graph, features, labels, split, runs: int = 10, base_seed: int = 0,
                    defense: Optional[Callable[[Graph], Graph]] = None, hyper=None,
                    **meta) -> EvalReport:
    """Train ``runs`` fresh victims (seeds base_seed + r) and report test accuracy.

    ``defense`` maps the poisoned graph to the graph the victim trains on.
    Diverged runs are logged and left out of the statistics.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    g = defense(poisoned) if defense is not None else poisoned
    accs, seeds, failed = [], [], []
    for r in range(runs):
        seed = base_seed + r
        try:
            params, a_hat = train_victim(g, features, labels, split, seed, hyper)
        except TrainingDivergedError as exc:
            log.warning("victim run with seed %d diverged: %s", seed, exc)
            failed.append(seed)
            continue
        accs.append(accuracy(forward(params, features, a_hat), labels, split.test))
        seeds.append(seed)
    meta.setdefault("defense", "none" if defense is None else getattr(defense, "name", "custom"))
    return EvalReport.from_accuracies(accs, seeds, failed_runs=failed, **meta)


class JaccardDefense:
    name = "jaccard"

    def __init__(self, features, threshold=0.01):
        self.features, self.threshold = features, threshold

    def __call__(self, g: Graph) -> Graph:
        return jaccard_filter(g, self.features, self.threshold)


EDGE_CLASSES = ("kept", "added", "removed")


@dataclass
class EdgeClassStats:
    count: int
    mean_feature_cosine: float
    mean_feature_jaccard: float
    label_equal_fraction: float


@dataclass
class AttackStats:
    degree_clean: dict
    degree_poisoned: dict
    ks_statistic: float
    edges: dict  # class name -> EdgeClassStats

    def different_label_fraction(self, cls: str) -> float:
        s = self.edges[cls]
        return float("nan") if s.count == 0 else 1.0 - s.label_equal_fraction


def _cosine(features, pairs):
    x = np.asarray(features, dtype=np.float64)
    a, b = x[pairs[:, 0]], x[pairs[:, 1]]
    num = np.einsum("ij,ij->i", a, b)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _class_stats(pairs, features, labels) -> EdgeClassStats:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0] == 0:
        return EdgeClassStats(0, float("nan"), float("nan"), float("nan"))
    labels = np.asarray(labels)
    return EdgeClassStats(
        count=int(pairs.shape[0]),
        mean_feature_cosine=float(np.mean(_cosine(features, pairs))),
        mean_feature_jaccard=float(np.mean(jaccard_similarity(features, pairs))),
        label_equal_fraction=float(np.mean(labels[pairs[:, 0]] == labels[pairs[:, 1]])),
    )


def degree_ks(clean: Graph, poisoned: Graph) -> float:
    """Two-sample Kolmogorov-Smirnov statistic between the node degree samples."""
    if clean.num_nodes == 0:
        return 0.0
    return float(ks_2samp(clean.degrees(), poisoned.degrees()).statistic)


def attack_statistics(clean: Graph, poisoned: Graph, features, labels) -> AttackStats:
    if clean.num_nodes != poisoned.num_nodes:
        raise ValueError("clean and poisoned graphs must share the node set")
    before, after = clean.edge_set(), poisoned.edge_set()
    groups = {
        "kept": sorted(before & after),
        "added": sorted(after - before),
        "removed": sorted(before - after),
    }
    return AttackStats(
        degree_clean=degree_distribution(clean),
        degree_poisoned=degree_distribution(poisoned),
        ks_statistic=degree_ks(clean, poisoned),
        edges={k: _class_stats(v, features, labels) for k, v in groups.items()},
    )


def _num(x) -> str:
    # repr gives the shortest string that round-trips
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def export_report(report: Optional[EvalReport], stats: Optional[AttackStats], path):
    """Write report.json, stats_degree.csv and stats_edges.csv under ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if report is not None:
        written.append(write_report(report, out / "report.json"))
    with open(out / "stats_degree.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["degree", "count_clean", "count_poisoned"])
        if stats is not None:
            degrees = sorted(set(stats.degree_clean) | set(stats.degree_poisoned))
            for d in degrees:
                w.writerow([d, stats.degree_clean.get(d, 0), stats.degree_poisoned.get(d, 0)])
    with open(out / "stats_edges.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "count", "mean_feature_cosine", "label_equal_fraction"])
        if stats is not None:
            for cls in EDGE_CLASSES:
                s = stats.edges[cls]
                w.writerow([cls, s.count, _num(s.mean_feature_cosine), _num(s.label_equal_fraction)])
    written += [out / "stats_degree.csv", out / "stats_edges.csv"]
    return written


def write_report(report: EvalReport, path) -> Path:
    with open(path, "w") as fh:
        json.dump(report.to_json(), fh, indent=2, default=str)
    return Path(path)


def read_report(path) -> EvalReport:
    with open(path) as fh:
        return EvalReport.from_json(json.load(fh))


def read_stats_edges(path) -> dict:
    with open(path, newline="") as fh:
        return {row["class"]: {"count": int(row["count"]),
                               "mean_feature_cosine": float(row["mean_feature_cosine"]),
                               "label_equal_fraction": float(row["label_equal_fraction"])}
                for row in csv.DictReader(fh)}


def read_stats_degree(path) -> dict:
    with open(path, newline="") as fh:
        return {int(r["degree"]): (int(r["count_clean"]), int(r["count_poisoned"]))
                for r in csv.DictReader(fh)}
