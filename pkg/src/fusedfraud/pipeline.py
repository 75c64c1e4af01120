"""In-memory pipeline: graph, relation embeddings, model, detection, evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from typing import Iterable, Optional, Sequence

import numpy as np

from . import detect, kg, rules, synth
from .config import PipelineConfig
from .graph import FusedGraph, build_fused_graph, tcs, triples
from .model import ModelShape, TrainConfig, TrainedModel, train
from .txn import FRAUD, LabelSet, RelationKind, Transaction, window

VARIANTS = ("full", "-R", "-W", "-P")


def scenario_config(cfg: PipelineConfig) -> synth.ScenarioConfig:
    return synth.ScenarioConfig(
        n_users=cfg.n_users, n_products=cfg.n_products, n_days=cfg.n_days, fraud_fraction=cfg.fraud_fraction,
        n_stocking_groups=cfg.n_stocking_groups, n_cashback_groups=cfg.n_cashback_groups,
        n_mixed_groups=cfg.n_mixed_groups, group_size_range=(cfg.group_size_min, cfg.group_size_max),
        normal_txn_rate=cfg.normal_txn_rate, seed=cfg.seed,
    )


def model_shape(cfg: PipelineConfig) -> ModelShape:
    return ModelShape(rel_dim=cfg.rel_dim, node_dim=cfg.node_dim, att_dim=cfg.att_dim, heads=cfg.heads)


def select_window(txns: Sequence[Transaction], cfg: PipelineConfig) -> list[Transaction]:
    """The last ``window_days`` days ending at ``end_day`` (0: the latest day in the log)."""
    if not txns:
        return []
    end = cfg.end_day if cfg.end_day > 0 else max(t.day for t in txns)
    return window(txns, end, cfg.window_days)


def build_graph(txns: Sequence[Transaction], cfg: PipelineConfig) -> FusedGraph:
    return build_fused_graph(select_window(txns, cfg), cfg.lam)


def relation_embeddings(graph: FusedGraph, cfg: PipelineConfig, variant: str = "full") -> kg.RelationEmbeddings:
    if variant == "-R":
        return kg.RelationEmbeddings.uniform(cfg.rel_dim)
    trip = triples(graph)
    if len(trip) == 0:
        raise ValueError("graph has no relation triples to embed")
    return kg.train_transr(trip, graph.n_nodes, d=cfg.rel_dim, k=cfg.rel_dim, margin=cfg.margin,
                           epochs=cfg.transr_epochs, lr=cfg.transr_lr, seed=cfg.seed)


def train_config(cfg: PipelineConfig, variant: str = "full") -> TrainConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    return TrainConfig(
        lr=cfg.lr, max_epochs=cfg.max_epochs, check_every=cfg.check_every, patience=cfg.patience,
        seed_quantile=cfg.seed_quantile, propagation_threshold=cfg.propagation_threshold, margin=cfg.margin,
        triples_per_epoch=cfg.transr_batch, use_relation_loss=variant != "-R", unit_weights=variant == "-W",
        seed=cfg.seed,
    )


def fit_model(graph: FusedGraph, emb: kg.RelationEmbeddings, labels: LabelSet, cfg: PipelineConfig,
              variant: str = "full") -> TrainedModel:
    return train(graph, emb, labels, train_config(cfg, variant), model_shape(cfg))


def run_detection(graph: FusedGraph, model: TrainedModel, txns: Sequence[Transaction], cfg: PipelineConfig,
                  propagation: bool = True, seed_quantile: Optional[float] = None,
                  threshold: Optional[float] = None) -> detect.DetectionResult:
    err, alpha = model.scores(graph)
    return detect.detect(
        graph, err, alpha, select_window(txns, cfg),
        cfg.seed_quantile if seed_quantile is None else seed_quantile,
        cfg.propagation_threshold if threshold is None else threshold,
        propagation,
    )


def evaluate(predicted: Iterable[str], labels: LabelSet, cfg: PipelineConfig,
             truth: Optional[Iterable[str]] = None) -> rules.Metrics:
    if cfg.metric_policy == rules.ORACLE:
        truth = labels.users_with(FRAUD) if truth is None else truth
        return rules.metrics(predicted, labels, rules.ORACLE, truth=truth)
    return rules.metrics(predicted, labels, rules.EXCLUDE)


@dataclass
class Fitted:
    graph: FusedGraph
    embeddings: kg.RelationEmbeddings
    model: TrainedModel


def fit(txns: Sequence[Transaction], labels: LabelSet, cfg: PipelineConfig, variant: str = "full") -> Fitted:
    graph = build_graph(txns, cfg)
    # -P shares the full model; only detection changes
    emb = relation_embeddings(graph, cfg, variant)
    return Fitted(graph, emb, fit_model(graph, emb, labels, cfg, "full" if variant == "-P" else variant))


def ablation_suite(txns: Sequence[Transaction], labels: LabelSet, cfg: PipelineConfig,
                   variants: Sequence[str] = VARIANTS, truth: Optional[Iterable[str]] = None) -> dict[str, rules.Metrics]:
    """Metrics per variant; -P reuses the full model when both are requested."""
    out: dict[str, rules.Metrics] = {}
    full: Optional[Fitted] = None
    for variant in variants:
        if variant in ("full", "-P"):
            full = full or fit(txns, labels, cfg, "full")
            fitted = full
        else:
            fitted = fit(txns, labels, cfg, variant)
        result = run_detection(fitted.graph, fitted.model, txns, cfg, propagation=variant != "-P")
        out[variant] = evaluate(result.predicted, labels, cfg, truth)
    return out


def sweep(graph: FusedGraph, model: TrainedModel, txns: Sequence[Transaction], labels: LabelSet,
          cfg: PipelineConfig, parameter: str, values: Sequence[float],
          truth: Optional[Iterable[str]] = None) -> list[tuple[float, rules.Metrics]]:
    """Detection metrics as one threshold varies; the model is scored once."""
    err, alpha = model.scores(graph)
    window_txns = select_window(txns, cfg)
    rows = []
    for v in values:
        ts = v if parameter == "seed_quantile" else cfg.seed_quantile
        tp = v if parameter == "propagation_threshold" else cfg.propagation_threshold
        result = detect.detect(graph, err, alpha, window_txns, ts, tp)
        rows.append((float(v), evaluate(result.predicted, labels, cfg, truth)))
    return rows


TP_GRID = tuple(round(0.4 + 0.05 * i, 2) for i in range(11))
TS_GRID = tuple(round(0.004 * i, 3) for i in range(1, 7))


def normal_store_groups(graph: FusedGraph, txns: Sequence[Transaction], labels: LabelSet,
                        sizes: Sequence[int], rng: np.random.Generator) -> list[list[str]]:
    """Comparison groups of non-fraud graph users sharing a home store, size-matched to ``sizes``."""
    by_store: dict[str, set[str]] = {}
    for t in txns:
        s = t.relation(RelationKind.RETAIL_STORE)
        if s is not None and t.user_id in graph and labels.label(t.user_id) != FRAUD:
            by_store.setdefault(s, set()).add(t.user_id)
    stores = sorted(by_store)
    groups = []
    for size in sizes:
        eligible = [s for s in stores if len(by_store[s]) >= size]
        if not eligible:
            raise ValueError(f"no store has {size} normal graph users to form a comparison group")
        store = eligible[int(rng.integers(len(eligible)))]
        members = sorted(by_store[store])
        groups.append([members[int(i)] for i in rng.choice(len(members), size=size, replace=False)])
    return groups


TCS_RELATIONS = tuple(RelationKind)


def tcs_table(graph: FusedGraph, fraud_groups: Sequence[Sequence[str]], normal_groups: Sequence[Sequence[str]],
              ) -> list[tuple[RelationKind, Optional[float], Optional[float]]]:
    """Per relation: mean TCS of fraud groups and of normal groups; undefined scores count as 0."""
    rows = []
    for r in TCS_RELATIONS:
        means = []
        for groups in (fraud_groups, normal_groups):
            vals = []
            for grp in groups:
                members = [u for u in grp if u in graph]
                if not members:
                    continue
                score = tcs(graph, members, r)
                vals.append(0.0 if score is None else score)
            means.append(float(np.mean(vals)) if vals else None)
        rows.append((r, means[0], means[1]))
    return rows


def blocked_transactions(predicted: Iterable[str], txns: Iterable[Transaction]) -> list[Transaction]:
    """Promoted purchases of detected users: the subsidised orders blocking would stop."""
    pred = set(predicted)
    return [t for t in txns if t.user_id in pred and t.relation(RelationKind.PROMOTION) is not None]


def classify_groups(groups: dict[str, set[str]], txns: Sequence[Transaction], labels: LabelSet,
                    cashback: dict[str, Decimal], cfg: PipelineConfig) -> list[tuple[str, int, bool, bool]]:
    """(store, size, stocking flag, cashback flag) for every detected store group."""
    stats = rules.fit_rule_stats(txns, labels, cashback, Decimal(str(cfg.commission)), cfg.kappa)
    out = []
    for store, members in groups.items():
        stocking, _ = rules.rule1_flag(members, txns, stats)
        abuse = rules.rule2_flag(store, txns, cashback, stats, Decimal(str(cfg.commission)))
        out.append((store, len(members), stocking, abuse))
    return out
