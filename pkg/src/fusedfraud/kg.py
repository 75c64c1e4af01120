"""TransR relation embeddings learned from fused-graph relation triples.

Only the relation vectors leave this module; entity vectors exist to train
them and are discarded.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .txn import N_RELATIONS, read_csv_rows

DIM = 8
MARGIN = 1.0
EPOCHS = 200
BATCH_SIZE = 1024
LEARNING_RATE = 0.01


@dataclass
class TransRParams:
    entity: np.ndarray  # (n_entities, d)
    relation: np.ndarray  # (n_relations, k)
    projection: np.ndarray  # (n_relations, d, k)
    margin: float = MARGIN

    @property
    def n_entities(self) -> int:
        return self.entity.shape[0]

    def copy(self) -> "TransRParams":
        return TransRParams(self.entity.copy(), self.relation.copy(), self.projection.copy(), self.margin)


@dataclass
class RelationEmbeddings:
    """One vector per RelationKind, in RelationKind order."""

    vectors: np.ndarray  # (8, d)

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != N_RELATIONS:
            raise ValueError(f"expected {N_RELATIONS} relation vectors, got shape {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("relation vectors must be finite")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def uniform(cls, d: int = DIM) -> "RelationEmbeddings":
        return cls(np.full((N_RELATIONS, d), 1.0 / np.sqrt(d)))


def init_transr(n_entities: int, d: int = DIM, k: int = DIM, margin: float = MARGIN,
                rng: Optional[np.random.Generator] = None) -> TransRParams:
    rng = rng if rng is not None else np.random.default_rng(0)
    bound = 6.0 / np.sqrt(k)
    entity = rng.uniform(-bound, bound, size=(n_entities, d))
    relation = rng.uniform(-bound, bound, size=(N_RELATIONS, k))
    entity /= np.linalg.norm(entity, axis=1, keepdims=True)
    relation /= np.linalg.norm(relation, axis=1, keepdims=True)
    projection = np.tile(np.eye(d, k), (N_RELATIONS, 1, 1))
    return TransRParams(entity, relation, projection, margin)


def _residual(params: TransRParams, trip: np.ndarray) -> np.ndarray:
    h, r, t = trip[:, 0], trip[:, 1], trip[:, 2]
    delta = params.entity[h] - params.entity[t]
    return np.einsum("bd,bdk->bk", delta, params.projection[r]) + params.relation[r]


def transr_score(params: TransRParams, i: int, r: int, j: int) -> float:
    """L1 distance between the projected head plus relation and the projected tail."""
    n = params.n_entities
    if not (0 <= i < n and 0 <= j < n):
        raise KeyError(f"unknown entity index in ({i}, {j}); have {n} entities")
    if not 0 <= r < params.relation.shape[0]:
        raise KeyError(f"unknown relation index {r}")
    return float(np.abs(_residual(params, np.array([[i, r, j]]))).sum())


def scores(params: TransRParams, trip: np.ndarray) -> np.ndarray:
    if len(trip) == 0:
        return np.zeros(0)
    return np.abs(_residual(params, trip)).sum(axis=1)


def margin_loss(params: TransRParams, positives: np.ndarray, negatives: np.ndarray,
                margin: Optional[float] = None) -> float:
    """Sum over matched pairs of max(0, f(pos) + margin - f(neg))."""
    margin = params.margin if margin is None else margin
    if margin < 0:
        raise ValueError(f"margin must be non-negative, got {margin}")
    if len(positives) != len(negatives):
        raise ValueError("positive and negative batches must be the same length")
    if len(positives) == 0:
        return 0.0
    return float(np.maximum(0.0, scores(params, positives) + margin - scores(params, negatives)).sum())


@dataclass
class TransRGrads:
    entity: np.ndarray
    relation: np.ndarray
    projection: np.ndarray


def margin_loss_grad(params: TransRParams, positives: np.ndarray, negatives: np.ndarray,
                     margin: Optional[float] = None) -> tuple[float, TransRGrads]:
    """Loss and gradient; the L1 subgradient at zero is taken as 0."""
    margin = params.margin if margin is None else margin
    grads = TransRGrads(np.zeros_like(params.entity), np.zeros_like(params.relation),
                        np.zeros_like(params.projection))
    if len(positives) == 0:
        return 0.0, grads
    res_pos = _residual(params, positives)
    res_neg = _residual(params, negatives)
    hinge = np.abs(res_pos).sum(1) + margin - np.abs(res_neg).sum(1)
    active = hinge > 0
    loss = float(hinge[active].sum())
    for trip, res, sign in ((positives[active], res_pos[active], 1.0), (negatives[active], res_neg[active], -1.0)):
        if len(trip) == 0:
            continue
        g = sign * np.sign(res)  # d loss / d residual
        h, r, t = trip[:, 0], trip[:, 1], trip[:, 2]
        np.add.at(grads.relation, r, g)
        delta = params.entity[h] - params.entity[t]
        np.add.at(grads.projection, r, np.einsum("bd,bk->bdk", delta, g))
        g_delta = np.einsum("bdk,bk->bd", params.projection[r], g)
        np.add.at(grads.entity, h, g_delta)
        np.add.at(grads.entity, t, -g_delta)
    return loss, grads


def symmetric_positives(trip: np.ndarray) -> np.ndarray:
    """Both orientations of every (i, r, j), deduplicated and sorted."""
    trip = np.asarray(trip, dtype=np.int64).reshape(-1, 3)
    both = np.concatenate([trip, trip[:, [2, 1, 0]]])
    return np.unique(both, axis=0)


def _keys(trip: np.ndarray, n_entities: int) -> np.ndarray:
    return (trip[:, 0] * N_RELATIONS + trip[:, 1]) * n_entities + trip[:, 2]


def corrupt_tails(batch: np.ndarray, known: np.ndarray, n_entities: int, rng: np.random.Generator,
                  max_tries: int = 50) -> np.ndarray:
    """Replace each tail with a uniform random entity, rejecting known positives.

    ``known`` is the sorted key array of all positives. Rows that still hit a
    positive after ``max_tries`` redraws keep their last draw.
    """
    neg = batch.copy()
    todo = np.arange(len(batch))
    for _ in range(max_tries):
        if len(todo) == 0:
            break
        neg[todo, 2] = rng.integers(n_entities, size=len(todo))
        keys = _keys(neg[todo], n_entities)
        pos = np.searchsorted(known, keys)
        hit = (pos < len(known)) & (known[np.minimum(pos, len(known) - 1)] == keys)
        todo = todo[hit]
    return neg


@dataclass
class TransRHistory:
    train_loss: list[float] = field(default_factory=list)
    holdout_loss: list[float] = field(default_factory=list)


def renormalize(params: TransRParams) -> None:
    # ||e|| <= 1, ||e_r|| <= 1, and ||e W_r|| <= 1 via spectral norm of W_r <= 1
    for arr in (params.entity, params.relation):
        norms = np.linalg.norm(arr, axis=1, keepdims=True)
        np.divide(arr, np.maximum(norms, 1.0), out=arr)
    u, sv, vt = np.linalg.svd(params.projection, full_matrices=False)
    if sv.max() > 1.0:
        params.projection[:] = np.einsum("rik,rk,rkj->rij", u, np.minimum(sv, 1.0), vt)


def fit_transr(trip: np.ndarray, n_entities: int, d: int = DIM, k: int = DIM, margin: float = MARGIN,
               epochs: int = EPOCHS, lr: float = LEARNING_RATE, batch_size: int = BATCH_SIZE, seed: int = 0,
               holdout: Optional[np.ndarray] = None) -> tuple[TransRParams, TransRHistory]:
    """Mini-batch SGD on the margin loss over symmetric positive triples.

    ``holdout`` triples are never trained on; their loss against fixed
    corrupted tails is recorded once before training and after every epoch.
    """
    rng = np.random.default_rng(seed)
    positives = symmetric_positives(trip)
    if len(positives) == 0:
        raise ValueError("need at least one relation triple to train TransR")
    params = init_transr(n_entities, d, k, margin, rng)
    history = TransRHistory()
    all_pos = positives if holdout is None else symmetric_positives(np.concatenate([trip, holdout]))
    known = np.sort(_keys(all_pos, n_entities))
    held = held_neg = None
    if holdout is not None and len(holdout):
        held = np.asarray(holdout, dtype=np.int64)
        held_neg = corrupt_tails(held, known, n_entities, rng)
        history.holdout_loss.append(margin_loss(params, held, held_neg) / len(held))
    for _ in range(epochs):
        order = rng.permutation(len(positives))
        total = 0.0
        for start in range(0, len(order), batch_size):
            batch = positives[order[start:start + batch_size]]
            neg = corrupt_tails(batch, known, n_entities, rng)
            loss, g = margin_loss_grad(params, batch, neg)
            total += loss
            params.entity -= lr * g.entity
            params.relation -= lr * g.relation
            params.projection -= lr * g.projection
            renormalize(params)
        history.train_loss.append(total / len(positives))
        if held is not None:
            history.holdout_loss.append(margin_loss(params, held, held_neg) / len(held))
    return params, history


def train_transr(trip: np.ndarray, n_entities: int, d: int = DIM, k: int = DIM, margin: float = MARGIN,
                 epochs: int = EPOCHS, lr: float = LEARNING_RATE, seed: int = 0) -> RelationEmbeddings:
    """Fit TransR and export the relation vectors as unit directions.

    Symmetric positives pull frequent relations toward the origin, so raw
    lengths mostly reflect relation frequency rather than structure.
    """
    params, _ = fit_transr(trip, n_entities, d, k, margin, epochs, lr, seed=seed)
    norms = np.linalg.norm(params.relation, axis=1, keepdims=True)
    return RelationEmbeddings(np.where(norms > 0, params.relation / np.where(norms > 0, norms, 1.0), 0.0))


def format_relation_embeddings(emb: RelationEmbeddings, preamble: Sequence[str] = ()) -> str:
    out = io.StringIO()
    for line in preamble:
        out.write(f"# {line}\n")
    out.write(",".join(["relation_index"] + [f"v{c}" for c in range(emb.dim)]) + "\n")
    for r, vec in enumerate(emb.vectors):
        out.write(",".join([str(r)] + [repr(float(x)) for x in vec]) + "\n")
    return out.getvalue()


def save_relation_embeddings(emb: RelationEmbeddings, path: str | Path, preamble: Sequence[str] = ()) -> None:
    Path(path).write_text(format_relation_embeddings(emb, preamble), encoding="utf-8", newline="\n")


def load_relation_embeddings(path: str | Path) -> RelationEmbeddings:
    rows = read_csv_rows(path)
    if [int(row["relation_index"]) for row in rows] != list(range(N_RELATIONS)):
        raise ValueError(f"{path}: expected relation_index 0..{N_RELATIONS - 1} in order")
    cols = [c for c in rows[0] if c != "relation_index"] if rows else []
    return RelationEmbeddings(np.array([[float(row[c]) for c in cols] for row in rows]))
