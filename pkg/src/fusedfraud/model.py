"""Attention aggregation over weighted relation features plus a semi-supervised autoencoder.

The forward pass and its reverse-mode gradient are written out by hand in
numpy; ``tests/test_gradients.py`` checks every tensor against central
finite differences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kg
from .graph import FusedGraph, triples
from .kg import RelationEmbeddings, TransRParams
from .txn import FRAUD, N_RELATIONS, NORMAL, UNKNOWN, LabelSet

log = logging.getLogger(__name__)

SLOPE = 0.01
EPS = 1e-7
CHECKPOINT_MAGIC = "fusedfraud-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelShape:
    rel_dim: int = 8  # d; edge features have 8 * d dims
    node_dim: int = 52  # D_n
    att_dim: int = 8  # D_a
    heads: int = 3  # l
    hidden: tuple[int, int] = (32, 16)

    @property
    def edge_dim(self) -> int:
        return N_RELATIONS * self.rel_dim


# order matters: checkpoints and gradient dicts follow it
PARAM_NAMES = (
    "node_base", "att_heads", "att_edge", "rel_emb",
    "enc1", "enc1_b", "enc2", "enc2_b", "dec1", "dec1_b", "dec2", "dec2_b",
    "ent_emb", "rel_proj",
)


def leaky_relu(x: np.ndarray, slope: float = SLOPE) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, slope: float = SLOPE) -> np.ndarray:
    return np.where(x > 0, 1.0, slope)


def init_params(shape: ModelShape, n_nodes: int, rel_emb: RelationEmbeddings,
                rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Every weight matrix starts as U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    ``node_base`` is a ones vector pushed through one such layer, so every node
    starts from the same learned vector.
    """
    def linear(fan_in, fan_out):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)

    if rel_emb.dim != shape.rel_dim:
        raise ValueError(f"relation embeddings have dim {rel_emb.dim}, model expects {shape.rel_dim}")
    Dn, Da, De = shape.node_dim, shape.att_dim, shape.edge_dim
    h1, h2 = shape.hidden
    proj_w, proj_b = linear(Dn, Dn)
    p: dict[str, np.ndarray] = {"node_base": np.ones(Dn) @ proj_w + proj_b}
    # small attention weights keep pre-activations near zero at the start
    p["att_heads"] = np.stack([linear(Dn, Da)[0] for _ in range(shape.heads)])
    p["att_edge"] = linear(De, Da)[0]
    p["rel_emb"] = rel_emb.vectors.copy()
    p["enc1"], p["enc1_b"] = linear(Dn, h1)
    p["enc2"], p["enc2_b"] = linear(h1, h2)
    p["dec1"], p["dec1_b"] = linear(h2, h1)
    p["dec2"], p["dec2_b"] = linear(h1, Dn)
    transr = kg.init_transr(n_nodes, shape.rel_dim, shape.rel_dim, rng=rng)
    p["ent_emb"] = transr.entity
    p["rel_proj"] = transr.projection
    return p


@dataclass
class GraphTensors:
    """Dense arrays the model consumes; ``feat_weights`` feed the edge features."""

    edges: np.ndarray  # (E, 2)
    mask: np.ndarray  # (E, 8) float
    weights: np.ndarray  # (E, 8) co-occurrence weights
    feat_weights: np.ndarray  # (E, 8) weights used in the edge features
    n_nodes: int

    @classmethod
    def from_graph(cls, graph: FusedGraph, unit_weights: bool = False) -> "GraphTensors":
        mask = graph.mask.astype(np.float64)
        weights = np.array(graph.weights, dtype=np.float64)
        feat = mask.copy() if unit_weights else weights.copy()
        return cls(np.array(graph.edges), mask, weights, feat, graph.n_nodes)


def edge_features(mask: np.ndarray, weights: np.ndarray, rel_emb: np.ndarray) -> np.ndarray:
    """Blockwise w_r * e_r where the relation bit is set, zero blocks elsewhere."""
    mask = np.asarray(mask, dtype=np.float64)
    coef = mask * np.asarray(weights, dtype=np.float64)
    single = coef.ndim == 1
    coef = np.atleast_2d(coef)
    feats = (coef[:, :, None] * rel_emb[None, :, :]).reshape(len(coef), -1)
    return feats[0] if single else feats


def head_preactivations(node_vec: np.ndarray, feats: np.ndarray, att_heads: np.ndarray,
                        att_edge: np.ndarray) -> np.ndarray:
    """(h W_k) . (f W) for every edge and head, shape (E, l)."""
    queries = np.einsum("n,knd->kd", node_vec, att_heads)
    return np.atleast_2d(feats) @ att_edge @ queries.T


def attention_score(node_vec: np.ndarray, feat: np.ndarray, att_heads: np.ndarray, att_edge: np.ndarray,
                    slope: float = SLOPE) -> float:
    """Head-averaged LeakyReLU attention for one edge (no neighbour softmax)."""
    pre = head_preactivations(node_vec, feat, att_heads, att_edge)[0]
    return float(leaky_relu(pre, slope).mean())


def node_vector(node_base: np.ndarray) -> np.ndarray:
    """Unit direction of the shared base.

    Left free, its length would trade off against the attention matrices and
    leave the attention scale (which the propagation threshold reads) arbitrary.
    With unit length, |h'_i| equals the attention mass of node i.
    """
    return node_base / np.linalg.norm(node_base)


def aggregate(edges: np.ndarray, alpha: np.ndarray, node_base: np.ndarray, n_nodes: int) -> np.ndarray:
    """h'_i = sum over neighbours j of alpha_ij * h_j, with h_j = node_base for all j."""
    strength = np.bincount(edges[:, 0], alpha, n_nodes) + np.bincount(edges[:, 1], alpha, n_nodes)
    return strength[:, None] * node_base[None, :]


def autoencode(x: np.ndarray, params: dict[str, np.ndarray], slope: float = SLOPE) -> np.ndarray:
    a = leaky_relu(x @ params["enc1"] + params["enc1_b"], slope)
    z = leaky_relu(a @ params["enc2"] + params["enc2_b"], slope)
    a = leaky_relu(z @ params["dec1"] + params["dec1_b"], slope)
    return a @ params["dec2"] + params["dec2_b"]


def reconstruct(h_agg: np.ndarray, params: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Decoder(encoder(h')) and the per-row Euclidean reconstruction error."""
    h_star = autoencode(np.atleast_2d(h_agg), params)
    err = np.linalg.norm(h_star - np.atleast_2d(h_agg), axis=1)
    if np.ndim(h_agg) == 1:
        return h_star[0], err[0]
    return h_star, err


def score_map(loss: np.ndarray) -> np.ndarray:
    """Monotone map of reconstruction error into (0, 1) so BCE is defined."""
    return -np.expm1(-np.asarray(loss, dtype=np.float64))


@dataclass
class LossBreakdown:
    relation: float  # L_r
    labeled: float  # L_l
    unlabeled: float  # L_u

    @property
    def total(self) -> float:
        return self.relation + self.labeled + self.unlabeled


def total_loss(recon_err: np.ndarray, labels: np.ndarray, relation_loss: float = 0.0,
               labeled_mask: Optional[np.ndarray] = None) -> LossBreakdown:
    """BCE on mapped scores of labeled nodes, mean squared error of unlabeled nodes.

    ``labels`` holds 1/0/-1 per node; ``labeled_mask`` restricts which labeled
    nodes enter the BCE term (the training split).
    """
    recon_err = np.asarray(recon_err, dtype=np.float64)
    labels = np.asarray(labels)
    if np.any(recon_err < 0):
        raise ValueError("reconstruction errors must be non-negative")
    lab = labels >= 0 if labeled_mask is None else labeled_mask & (labels >= 0)
    unl = labels == UNKNOWN
    labeled = 0.0
    if lab.any():
        s = np.clip(score_map(recon_err[lab]), EPS, 1 - EPS)
        y = labels[lab].astype(np.float64)
        labeled = float(-np.mean(y * np.log(s) + (1 - y) * np.log1p(-s)))
    unlabeled = float(np.mean(recon_err[unl] ** 2)) if unl.any() else 0.0
    return LossBreakdown(float(relation_loss), labeled, unlabeled)


@dataclass
class Batch:
    """Everything one loss evaluation needs besides the parameters."""

    graph: GraphTensors
    labels: np.ndarray  # (N,) in {1, 0, -1}
    train_mask: np.ndarray  # (N,) bool; labeled nodes contributing BCE
    positives: Optional[np.ndarray] = None  # (B, 3) TransR triples
    negatives: Optional[np.ndarray] = None
    margin: float = kg.MARGIN
    use_relation_loss: bool = True


@dataclass
class Forward:
    feats: np.ndarray
    G: np.ndarray
    queries: np.ndarray
    pre: np.ndarray
    alpha: np.ndarray
    strength: np.ndarray
    x: np.ndarray
    z: list[np.ndarray] = field(default_factory=list)
    acts: list[np.ndarray] = field(default_factory=list)
    recon: Optional[np.ndarray] = None
    err: Optional[np.ndarray] = None


_LAYERS = (("enc1", "enc1_b", True), ("enc2", "enc2_b", True), ("dec1", "dec1_b", True), ("dec2", "dec2_b", False))


def forward(params: dict[str, np.ndarray], gt: GraphTensors) -> Forward:
    feats = edge_features(gt.mask, gt.feat_weights, params["rel_emb"])
    G = feats @ params["att_edge"]
    unit = node_vector(params["node_base"])
    queries = np.einsum("n,knd->kd", unit, params["att_heads"])
    pre = G @ queries.T
    alpha = leaky_relu(pre).mean(axis=1)
    e0, e1 = gt.edges[:, 0], gt.edges[:, 1]
    strength = np.bincount(e0, alpha, gt.n_nodes) + np.bincount(e1, alpha, gt.n_nodes)
    x = strength[:, None] * unit[None, :]
    fw = Forward(feats, G, queries, pre, alpha, strength, x)
    a = x
    for w, b, act in _LAYERS:
        z = a @ params[w] + params[b]
        fw.z.append(z)
        fw.acts.append(a)
        a = leaky_relu(z) if act else z
    fw.recon = a
    fw.err = np.linalg.norm(a - x, axis=1)
    return fw


def _relation_loss_grad(params, batch: Batch) -> tuple[float, dict[str, np.ndarray]]:
    grads = {k: np.zeros_like(params[k]) for k in ("rel_emb", "ent_emb", "rel_proj")}
    if not batch.use_relation_loss or batch.positives is None or len(batch.positives) == 0:
        return 0.0, grads
    transr = TransRParams(params["ent_emb"], params["rel_emb"], params["rel_proj"], batch.margin)
    loss, g = kg.margin_loss_grad(transr, batch.positives, batch.negatives)
    n = len(batch.positives)
    grads["rel_emb"] = g.relation / n
    grads["ent_emb"] = g.entity / n
    grads["rel_proj"] = g.projection / n
    return loss / n, grads


def loss_and_grad(params: dict[str, np.ndarray], batch: Batch) -> tuple[LossBreakdown, dict[str, np.ndarray], Forward]:
    """Total loss and its gradient with respect to every parameter tensor.

    The relation term is the hinge loss averaged over the sampled triples.
    """
    gt = batch.graph
    fw = forward(params, gt)
    err, labels = fw.err, batch.labels
    rel_loss, grads = _relation_loss_grad(params, batch)
    breakdown = total_loss(err, labels, rel_loss, batch.train_mask)

    # d loss / d err
    d_err = np.zeros_like(err)
    lab = batch.train_mask & (labels >= 0)
    if lab.any():
        raw = score_map(err[lab])
        s = np.clip(raw, EPS, 1 - EPS)
        y = labels[lab].astype(np.float64)
        d_s = -(y / s - (1 - y) / (1 - s)) / lab.sum()
        d_s = np.where((raw > EPS) & (raw < 1 - EPS), d_s, 0.0)
        d_err[lab] += d_s * np.exp(-err[lab])
    unl = labels == UNKNOWN
    if unl.any():
        d_err[unl] += 2.0 * err[unl] / unl.sum()

    resid = fw.recon - fw.x
    safe = np.where(err > 0, err, 1.0)
    d_resid = np.where(err[:, None] > 0, d_err[:, None] * resid / safe[:, None], 0.0)

    d_a = d_resid
    d_x = -d_resid
    for (w, b, act), z, a_in in zip(reversed(_LAYERS), reversed(fw.z), reversed(fw.acts)):
        d_z = d_a * leaky_relu_grad(z) if act else d_a
        grads[w] = a_in.T @ d_z
        grads[b] = d_z.sum(axis=0)
        d_a = d_z @ params[w].T
    d_x = d_x + d_a

    norm = np.linalg.norm(params["node_base"])
    base = params["node_base"] / norm
    g_base = d_x.T @ fw.strength
    d_strength = d_x @ base
    e0, e1 = gt.edges[:, 0], gt.edges[:, 1]
    d_alpha = d_strength[e0] + d_strength[e1]
    d_pre = d_alpha[:, None] * leaky_relu_grad(fw.pre) / fw.pre.shape[1]
    d_G = d_pre @ fw.queries
    d_queries = d_pre.T @ fw.G
    grads["att_heads"] = np.einsum("n,kd->knd", base, d_queries)
    g_base += np.einsum("knd,kd->n", params["att_heads"], d_queries)
    grads["node_base"] = (g_base - base * (base @ g_base)) / norm
    grads["att_edge"] = fw.feats.T @ d_G
    d_feats = (d_G @ params["att_edge"].T).reshape(len(gt.edges), N_RELATIONS, -1)
    coef = gt.mask * gt.feat_weights
    grads["rel_emb"] = grads["rel_emb"] + np.einsum("er,erd->rd", coef, d_feats)
    return breakdown, {k: grads[k] for k in PARAM_NAMES}, fw


def loss_only(params: dict[str, np.ndarray], batch: Batch) -> float:
    fw = forward(params, batch.graph)
    rel = 0.0
    if batch.use_relation_loss and batch.positives is not None and len(batch.positives):
        transr = TransRParams(params["ent_emb"], params["rel_emb"], params["rel_proj"], batch.margin)
        rel = kg.margin_loss(transr, batch.positives, batch.negatives) / len(batch.positives)
    return total_loss(fw.err, batch.labels, rel, batch.train_mask).total


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 frozen: Sequence[str] = ()):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.frozen = set(frozen)
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            if k in self.frozen:
                continue
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    max_epochs: int = 2000
    check_every: int = 100
    patience: int = 5
    split: tuple[int, int] = (5, 2)
    seed_quantile: float = 0.012
    propagation_threshold: float = 0.65
    triples_per_epoch: int = kg.BATCH_SIZE
    margin: float = kg.MARGIN
    use_relation_loss: bool = True
    freeze_relations: bool = False
    unit_weights: bool = False
    seed: int = 0


@dataclass
class TrainedModel:
    params: dict[str, np.ndarray]
    shape: ModelShape
    unit_weights: bool = False
    history: list[dict] = field(default_factory=list)

    def scores(self, graph: FusedGraph) -> tuple[np.ndarray, np.ndarray]:
        """Per-node reconstruction error and per-edge attention on ``graph``."""
        gt = GraphTensors.from_graph(graph, unit_weights=self.unit_weights)
        fw = forward(self.params, gt)
        return fw.err, fw.alpha


class TrainingError(ValueError):
    pass


def split_labeled(labels: np.ndarray, ratio: tuple[int, int], rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/validation split of the labeled nodes."""
    train = np.zeros(len(labels), dtype=bool)
    val = np.zeros(len(labels), dtype=bool)
    a, b = ratio
    for cls in (FRAUD, NORMAL):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(len(idx) * b / (a + b)))
        val[idx[:n_val]] = True
        train[idx[n_val:]] = True
    for name, part in (("training", train), ("validation", val)):
        present = set(labels[part].tolist())
        if not {FRAUD, NORMAL} <= present:
            raise TrainingError(f"{name} split needs both fraud and normal labeled nodes")
    return train, val


def top_quantile(scores: np.ndarray, q: float, names: Optional[Sequence[str]] = None) -> np.ndarray:
    """Indices of the ceil(q * n) largest scores; ties go to the smaller name (or index)."""
    n = len(scores)
    k = min(n, math.ceil(q * n - 1e-12))
    keys = np.arange(n) if names is None else np.argsort(np.argsort(np.asarray(names, dtype=object)))
    order = np.lexsort((keys, -np.asarray(scores)))
    return order[:k]


def f1_score(pred: np.ndarray, truth: np.ndarray) -> float:
    tp = float(np.sum(pred & truth))
    fp = float(np.sum(pred & ~truth))
    fn = float(np.sum(~pred & truth))
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


def node_labels(graph: FusedGraph, labels: LabelSet) -> np.ndarray:
    return np.array([labels.label(u) for u in graph.nodes], dtype=np.int64)


def detection_mask(graph: FusedGraph, err: np.ndarray, alpha: np.ndarray, seed_quantile: float,
                   threshold: float) -> np.ndarray:
    """Seeds plus single-pass propagation, as a boolean mask over graph nodes."""
    pred = np.zeros(graph.n_nodes, dtype=bool)
    pred[top_quantile(err, seed_quantile, graph.nodes)] = True
    hot = alpha * graph.weights.sum(axis=1) > threshold
    a, b = graph.edges[:, 0], graph.edges[:, 1]
    seeded = pred.copy()
    pred[b[hot & seeded[a]]] = True
    pred[a[hot & seeded[b]]] = True
    return pred


def train(graph: FusedGraph, rel_emb: RelationEmbeddings, labels: LabelSet, cfg: TrainConfig = TrainConfig(),
          shape: ModelShape = ModelShape()) -> TrainedModel:
    """Full-batch Adam with early stopping on the detector's F1 over validation nodes.

    A check counts as an improvement only when validation F1 strictly rises;
    the parameters from the first best check are returned.
    """
    rng = np.random.default_rng(cfg.seed)
    y = node_labels(graph, labels)
    train_mask, val_mask = split_labeled(y, cfg.split, rng)
    gt = GraphTensors.from_graph(graph, unit_weights=cfg.unit_weights)
    params = init_params(shape, graph.n_nodes, rel_emb, rng)
    frozen = ("rel_emb",) if cfg.freeze_relations else ()
    opt = Adam(params, lr=cfg.lr, frozen=frozen)

    positives = kg.symmetric_positives(triples(graph))
    known = np.sort(kg._keys(positives, graph.n_nodes))
    use_rel = cfg.use_relation_loss and len(positives) > 0

    val_truth = y[val_mask] == FRAUD
    best: Optional[dict[str, np.ndarray]] = None
    best_f1 = -1.0
    stale = 0
    history: list[dict] = []
    for epoch in range(1, cfg.max_epochs + 1):
        pos = neg = None
        if use_rel:
            take = rng.choice(len(positives), size=min(cfg.triples_per_epoch, len(positives)), replace=False)
            pos = positives[np.sort(take)]
            neg = kg.corrupt_tails(pos, known, graph.n_nodes, rng)
        batch = Batch(gt, y, train_mask, pos, neg, cfg.margin, use_rel)
        breakdown, grads, fw = loss_and_grad(params, batch)
        if epoch % cfg.check_every == 0:
            pred = detection_mask(graph, fw.err, fw.alpha, cfg.seed_quantile, cfg.propagation_threshold)
            val_f1 = f1_score(pred[val_mask], val_truth)
            history.append({"epoch": epoch, "loss": breakdown.total, "relation": breakdown.relation,
                            "labeled": breakdown.labeled, "unlabeled": breakdown.unlabeled, "val_f1": val_f1})
            log.debug("epoch %d loss %.6f val_f1 %.4f", epoch, breakdown.total, val_f1)
            if val_f1 > best_f1:
                best_f1, best, stale = val_f1, {k: v.copy() for k, v in params.items()}, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        opt.step(params, grads)
    if best is None:
        best = {k: v.copy() for k, v in params.items()}
    return TrainedModel(best, shape, cfg.unit_weights, history)


def save_checkpoint(model: TrainedModel, path: str | Path, preamble: Sequence[str] = ()) -> None:
    """Plain-text tensor dump: a header, then per tensor a shape line and its values."""
    lines = [f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}"]
    lines += [f"# {p}" for p in preamble]
    s = model.shape
    lines.append(f"shape rel_dim={s.rel_dim} node_dim={s.node_dim} att_dim={s.att_dim} heads={s.heads} "
                 f"hidden={s.hidden[0]}x{s.hidden[1]} unit_weights={int(model.unit_weights)}")
    for name in PARAM_NAMES:
        arr = np.asarray(model.params[name], dtype=np.float64)
        lines.append(f"tensor {name} {'x'.join(str(d) for d in arr.shape)}")
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_checkpoint(path: str | Path) -> TrainedModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing model checkpoint: {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").split("\n") if ln and not ln.startswith("#")]
    if not lines or lines[0] != f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}":
        raise ValueError(f"{path}: not a v{CHECKPOINT_VERSION} checkpoint")
    fields = dict(kv.split("=") for kv in lines[1].split()[1:])
    h1, h2 = (int(v) for v in fields["hidden"].split("x"))
    shape = ModelShape(int(fields["rel_dim"]), int(fields["node_dim"]), int(fields["att_dim"]),
                       int(fields["heads"]), (h1, h2))
    params: dict[str, np.ndarray] = {}
    body = lines[2:]
    for header, values in zip(body[::2], body[1::2]):
        _, name, dims = header.split()
        dims_t = tuple(int(d) for d in dims.split("x")) if dims else ()
        params[name] = np.array([float(v) for v in values.split()], dtype=np.float64).reshape(dims_t)
    missing = set(PARAM_NAMES) - set(params)
    if missing:
        raise ValueError(f"{path}: checkpoint lacks tensors {sorted(missing)}")
    return TrainedModel(params, shape, bool(int(fields["unit_weights"])))
