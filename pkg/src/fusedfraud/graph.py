"""Multi-relation fused user graph: relation events, co-occurrence weights, cohesion scores."""

from __future__ import annotations

import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .txn import N_RELATIONS, RelationKind, Transaction, read_csv_rows

DEFAULT_LAMBDA = 1.0


class RelationEvent(NamedTuple):
    user_i: str
    relation: RelationKind
    user_j: str
    day: int


def relate(txns: Iterable[Transaction]) -> set[RelationEvent]:
    """All (i, r, j, day) with a same-day, same-product, same-value match in r.

    Pairs are emitted once with ``user_i < user_j``.
    """
    buckets: dict[tuple[int, str, int, str], set[str]] = defaultdict(set)
    for t in txns:
        for r, value in enumerate(t.relations):
            if value is not None:
                buckets[(t.day, t.product_id, r, value)].add(t.user_id)
    events: set[RelationEvent] = set()
    for (day, _product, r, _value), users in buckets.items():
        if len(users) < 2:
            continue
        ordered = sorted(users)
        kind = RelationKind(r)
        for a in range(len(ordered)):
            for b in range(a + 1, len(ordered)):
                events.add(RelationEvent(ordered[a], kind, ordered[b], day))
    return events


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def cooccurrence_weight(pair_freq: int, solo_i: int, solo_j: int, lam: float = DEFAULT_LAMBDA) -> float:
    """Pair/max frequency ratio scaled by sigmoid(lam * max)."""
    if pair_freq < 0 or solo_i < 0 or solo_j < 0:
        raise ValueError("frequencies must be non-negative")
    top = max(solo_i, solo_j)
    if pair_freq > top:
        raise ValueError(f"pair frequency {pair_freq} exceeds solo frequency {top}")
    if pair_freq == 0:
        return 0.0
    return (pair_freq / top) * sigmoid(lam * top)


@dataclass
class FreqTables:
    """Per relation: distinct co-occurrence days per pair and distinct active days per user.

    A user is active in relation r on a day when one of its transactions that
    day carries a value for r.
    """

    pair: list[dict[tuple[str, str], int]] = field(default_factory=lambda: [{} for _ in range(N_RELATIONS)])
    solo: list[dict[str, int]] = field(default_factory=lambda: [{} for _ in range(N_RELATIONS)])

    @classmethod
    def from_window(cls, txns: Sequence[Transaction], events: Optional[Iterable[RelationEvent]] = None) -> "FreqTables":
        if events is None:
            events = relate(txns)
        active: list[set[tuple[str, int]]] = [set() for _ in range(N_RELATIONS)]
        for t in txns:
            for r, value in enumerate(t.relations):
                if value is not None:
                    active[r].add((t.user_id, t.day))
        tables = cls()
        for r in range(N_RELATIONS):
            counts: dict[str, int] = defaultdict(int)
            for user, _day in active[r]:
                counts[user] += 1
            tables.solo[r] = dict(counts)
        pair_days: list[dict[tuple[str, str], set[int]]] = [defaultdict(set) for _ in range(N_RELATIONS)]
        for ev in events:
            pair_days[int(ev.relation)][(ev.user_i, ev.user_j)].add(ev.day)
        for r in range(N_RELATIONS):
            tables.pair[r] = {k: len(v) for k, v in pair_days[r].items()}
        return tables


@dataclass(frozen=True, eq=False)
class FusedGraph:
    """Undirected user graph, one edge per related pair.

    ``edges[e] = (a, b)`` holds node indices with ``a < b``; ``mask[e, r]`` is
    the relation bit m(r) and ``weights[e, r]`` the co-occurrence weight.
    """

    nodes: tuple[str, ...]
    edges: np.ndarray  # (E, 2) int64
    mask: np.ndarray  # (E, 8) bool
    weights: np.ndarray  # (E, 8) float64

    def __post_init__(self) -> None:
        index = {u: i for i, u in enumerate(self.nodes)}
        object.__setattr__(self, "_index", index)
        for arr in (self.edges, self.mask, self.weights):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def index(self, user: str) -> int:
        return self._index[user]

    def __contains__(self, user: str) -> bool:
        return user in self._index

    @property
    def bitmaps(self) -> np.ndarray:
        return (self.mask.astype(np.int64) << np.arange(N_RELATIONS)).sum(axis=1)

    def edge_lookup(self) -> dict[tuple[int, int], int]:
        return {(int(a), int(b)): e for e, (a, b) in enumerate(self.edges)}

    def edge_between(self, u: str, v: str) -> Optional[int]:
        a, b = sorted((self.index(u), self.index(v)))
        return self.edge_lookup().get((a, b))

    def neighbors(self) -> list[list[tuple[int, int]]]:
        """Adjacency: for each node, ``(neighbor, edge)`` pairs."""
        adj: list[list[tuple[int, int]]] = [[] for _ in self.nodes]
        for e, (a, b) in enumerate(self.edges):
            adj[a].append((int(b), e))
            adj[b].append((int(a), e))
        return adj

    def strength(self, r: int) -> np.ndarray:
        """Total weight in relation r incident to each node."""
        w = self.weights[:, r]
        return np.bincount(self.edges[:, 0], w, self.n_nodes) + np.bincount(self.edges[:, 1], w, self.n_nodes)

    def equals(self, other: "FusedGraph") -> bool:
        return (
            self.nodes == other.nodes
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.weights, other.weights)
        )


def empty_graph() -> FusedGraph:
    return FusedGraph((), np.zeros((0, 2), np.int64), np.zeros((0, N_RELATIONS), bool), np.zeros((0, N_RELATIONS)))


def _assemble(pair_bits: dict[tuple[str, str], dict[int, float]]) -> FusedGraph:
    if not pair_bits:
        return empty_graph()
    nodes = tuple(sorted({u for pair in pair_bits for u in pair}))
    index = {u: i for i, u in enumerate(nodes)}
    keyed = sorted(((index[u], index[v]), rel) for (u, v), rel in pair_bits.items())
    edges = np.array([k for k, _ in keyed], dtype=np.int64)
    mask = np.zeros((len(keyed), N_RELATIONS), dtype=bool)
    weights = np.zeros((len(keyed), N_RELATIONS))
    for e, (_, rel) in enumerate(keyed):
        for r, w in rel.items():
            mask[e, r] = True
            weights[e, r] = w
    return FusedGraph(nodes, edges, mask, weights)


def build_fused_graph(txns: Sequence[Transaction], lam: float = DEFAULT_LAMBDA) -> FusedGraph:
    events = relate(txns)
    freq = FreqTables.from_window(txns, events)
    pair_bits: dict[tuple[str, str], dict[int, float]] = defaultdict(dict)
    for r in range(N_RELATIONS):
        solo = freq.solo[r]
        for (u, v), count in freq.pair[r].items():
            pair_bits[(u, v)][r] = cooccurrence_weight(count, solo[u], solo[v], lam)
    return _assemble(pair_bits)


def triples(graph: FusedGraph) -> np.ndarray:
    """Distinct (i, r, j) relation triples as node indices, one orientation each."""
    e_idx, r_idx = np.nonzero(graph.mask)
    return np.stack([graph.edges[e_idx, 0], r_idx, graph.edges[e_idx, 1]], axis=1).astype(np.int64)


def tcs(graph: FusedGraph, group: Iterable[str], r: RelationKind | int) -> Optional[float]:
    """Share of the group's relation-r weight mass that stays inside the group.

    Returns None when the group has no weight in r at all.
    """
    members = {graph.index(u) for u in group}
    if not members:
        return None
    r = int(r)
    w = graph.weights[:, r]
    in_a = np.isin(graph.edges[:, 0], list(members))
    in_b = np.isin(graph.edges[:, 1], list(members))
    # ordered pairs: each intra edge counts twice, each boundary edge once
    numerator = 2.0 * w[in_a & in_b].sum()
    denominator = w[in_a].sum() + w[in_b].sum()
    if denominator <= 0:
        return None
    return float(numerator / denominator)


GRAPH_COLUMNS = ("user_i", "user_j", "m_bitmap_hex") + tuple(f"w{r + 1}" for r in range(N_RELATIONS))


def format_graph(graph: FusedGraph, preamble: Sequence[str] = ()) -> str:
    out = io.StringIO()
    for line in preamble:
        out.write(f"# {line}\n")
    out.write(",".join(GRAPH_COLUMNS) + "\n")
    for (a, b), bitmap, w in zip(graph.edges, graph.bitmaps, graph.weights):
        cells = [graph.nodes[a], graph.nodes[b], f"{int(bitmap):02x}"] + [repr(float(x)) for x in w]
        out.write(",".join(cells) + "\n")
    return out.getvalue()


def save_graph(graph: FusedGraph, path: str | Path, preamble: Sequence[str] = ()) -> None:
    Path(path).write_text(format_graph(graph, preamble), encoding="utf-8", newline="\n")


def load_graph(path: str | Path) -> FusedGraph:
    pair_bits: dict[tuple[str, str], dict[int, float]] = {}
    for row in read_csv_rows(path):
        bitmap = int(row["m_bitmap_hex"], 16)
        u, v = sorted((row["user_i"], row["user_j"]))
        rel = {}
        for r in range(N_RELATIONS):
            w = float(row[f"w{r + 1}"])
            if bitmap >> r & 1:
                rel[r] = w
            elif w != 0.0:
                raise ValueError(f"edge {u}-{v}: weight w{r + 1} set without its relation bit")
        pair_bits[(u, v)] = rel
    return _assemble(pair_bits)
