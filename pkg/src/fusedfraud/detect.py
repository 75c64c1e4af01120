"""Seed selection, single-pass propagation and store-level grouping of detected users."""

from __future__ import annotations

import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import FusedGraph
from .txn import RelationKind, Transaction

DEFAULT_SEED_QUANTILE = 0.012
DEFAULT_PROPAGATION_THRESHOLD = 0.65


def seed_count(n: int, quantile: float) -> int:
    if not 0.0 < quantile < 1.0:
        raise ValueError(f"seed quantile must lie in (0, 1), got {quantile}")
    # guard against 0.012 * 1000 landing a hair above 12
    return min(n, math.ceil(round(quantile * n, 9)))


def select_seeds(scores: Mapping[str, float], quantile: float = DEFAULT_SEED_QUANTILE) -> set[str]:
    """The ceil(quantile * n) highest-scoring users; equal scores go to the smaller user id."""
    if not scores:
        raise ValueError("cannot select seeds from an empty score table")
    k = seed_count(len(scores), quantile)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return {u for u, _ in ranked[:k]}


def propagation_score(alpha: float, weights: Sequence[float]) -> float:
    return float(alpha) * float(np.sum(weights))


def propagation_scores(alpha: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.asarray(alpha) * np.asarray(weights).sum(axis=1)


def propagate(graph: FusedGraph, seeds: Iterable[str], alpha: np.ndarray,
              threshold: float = DEFAULT_PROPAGATION_THRESHOLD) -> set[str]:
    """Non-seed neighbours j of some seed i with p_ij > threshold.

    One pass only: flagged users are not expanded further.
    """
    seed_set = set(seeds)
    missing = [u for u in seed_set if u not in graph]
    if missing:
        raise KeyError(f"seeds not in graph: {sorted(missing)[:5]}")
    is_seed = np.zeros(graph.n_nodes, dtype=bool)
    is_seed[[graph.index(u) for u in seed_set]] = True
    hot = propagation_scores(alpha, graph.weights) > threshold
    a, b = graph.edges[:, 0], graph.edges[:, 1]
    flagged = np.zeros(graph.n_nodes, dtype=bool)
    flagged[b[hot & is_seed[a]]] = True
    flagged[a[hot & is_seed[b]]] = True
    flagged &= ~is_seed
    return {graph.nodes[i] for i in np.flatnonzero(flagged)}


def group_detections(predicted: Iterable[str], txns: Iterable[Transaction]) -> dict[str, set[str]]:
    """Retail store -> detected users who bought there, largest groups first."""
    predicted = set(predicted)
    groups: dict[str, set[str]] = defaultdict(set)
    for t in txns:
        store = t.relation(RelationKind.RETAIL_STORE)
        if store is not None and t.user_id in predicted:
            groups[store].add(t.user_id)
    return dict(sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0])))


@dataclass
class DetectionResult:
    scores: dict[str, float]
    seeds: set[str]
    propagated: set[str]
    groups: dict[str, set[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.seeds & self.propagated:
            raise ValueError("a user cannot be both a seed and propagated")

    @property
    def predicted(self) -> set[str]:
        return self.seeds | self.propagated

    def prediction(self, user: str) -> int:
        return int(user in self.seeds or user in self.propagated)


def detect(graph: FusedGraph, scores: np.ndarray, alpha: np.ndarray, txns: Sequence[Transaction],
           seed_quantile: float = DEFAULT_SEED_QUANTILE,
           threshold: float = DEFAULT_PROPAGATION_THRESHOLD, propagation: bool = True) -> DetectionResult:
    table = {u: float(s) for u, s in zip(graph.nodes, scores)}
    seeds = select_seeds(table, seed_quantile)
    flagged = propagate(graph, seeds, alpha, threshold) if propagation else set()
    return DetectionResult(table, seeds, flagged, group_detections(seeds | flagged, txns))


REPORT_COLUMNS = ("user_id", "score", "is_seed", "is_propagated", "prediction")


def format_report(result: DetectionResult, preamble: Sequence[str] = ()) -> str:
    out = io.StringIO()
    for line in preamble:
        out.write(f"# {line}\n")
    out.write(",".join(REPORT_COLUMNS) + "\n")
    for user in sorted(result.scores):
        out.write(f"{user},{result.scores[user]!r},{int(user in result.seeds)},"
                  f"{int(user in result.propagated)},{result.prediction(user)}\n")
    return out.getvalue()


def format_groups(result: DetectionResult, preamble: Sequence[str] = ()) -> str:
    out = io.StringIO()
    for line in preamble:
        out.write(f"# {line}\n")
    out.write("retail_store,user_id\n")
    for store, users in result.groups.items():
        for u in sorted(users):
            out.write(f"{store},{u}\n")
    return out.getvalue()


def save_detection(result: DetectionResult, report_path: str | Path, groups_path: str | Path,
                   preamble: Sequence[str] = ()) -> None:
    Path(report_path).write_text(format_report(result, preamble), encoding="utf-8", newline="\n")
    Path(groups_path).write_text(format_groups(result, preamble), encoding="utf-8", newline="\n")


def load_report(path: str | Path) -> DetectionResult:
    from .txn import read_csv_rows

    scores: dict[str, float] = {}
    seeds: set[str] = set()
    propagated: set[str] = set()
    for row in read_csv_rows(path):
        u = row["user_id"]
        scores[u] = float(row["score"])
        if row["is_seed"] == "1":
            seeds.add(u)
        if row["is_propagated"] == "1":
            propagated.add(u)
    return DetectionResult(scores, seeds, propagated)
