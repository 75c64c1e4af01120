"""Group classification rules (stocking up, cashback abuse) and evaluation metrics."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .txn import FRAUD, NORMAL, RelationKind, Transaction

KAPPA = 3.0
COMMISSION_RATE = Decimal("0.05")


def promoted_quantities(txns: Iterable[Transaction]) -> dict[str, dict[str, int]]:
    """product -> user -> total quantity bought under a promotion."""
    q: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for t in txns:
        if t.relation(RelationKind.PROMOTION) is not None:
            q[t.product_id][t.user_id] += t.quantity
    return q


@dataclass
class RuleStats:
    """Normal-population statistics both rules compare against."""

    product_mean: dict[str, float] = field(default_factory=dict)
    product_std: dict[str, float] = field(default_factory=dict)
    pooled_mean: float = 0.0
    pooled_std: float = 0.0
    ratio_mean: float = 0.0
    ratio_std: float = 0.0
    kappa: float = KAPPA

    def __post_init__(self) -> None:
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.pooled_std < 0 or self.ratio_std < 0 or any(s < 0 for s in self.product_std.values()):
            raise ValueError("standard deviations must be non-negative")

    def quantity_bound(self, product: str) -> float:
        # products no normal user bought on promotion fall back to the pooled population
        if product in self.product_mean:
            return self.product_mean[product] + self.kappa * self.product_std[product]
        return self.pooled_mean + self.kappa * self.pooled_std

    @property
    def ratio_bound(self) -> float:
        return self.ratio_mean + self.kappa * self.ratio_std


def quantity_stats(txns: Sequence[Transaction], normal_users: Iterable[str], kappa: float = KAPPA) -> RuleStats:
    normal = set(normal_users)
    means, stds, pooled = {}, {}, []
    for product, per_user in promoted_quantities(txns).items():
        vals = [q for u, q in per_user.items() if u in normal]
        if vals:
            means[product] = float(np.mean(vals))
            stds[product] = float(np.std(vals))
            pooled.extend(vals)
    return RuleStats(means, stds, float(np.mean(pooled)) if pooled else 0.0,
                     float(np.std(pooled)) if pooled else 0.0, kappa=kappa)


def rule1_flag(group: Iterable[str], txns: Sequence[Transaction], stats: RuleStats) -> tuple[bool, list[str]]:
    """Flag stocking up when some product's group-mean promoted quantity reaches mu + kappa * sigma."""
    members = sorted(set(group))
    if not members:
        raise ValueError("group must be non-empty")
    witnesses = []
    for product, per_user in sorted(promoted_quantities(txns).items()):
        bought = [per_user.get(u, 0) for u in members]
        if not any(bought):
            continue
        if float(np.mean(bought)) >= stats.quantity_bound(product):
            witnesses.append(product)
    return bool(witnesses), witnesses


@dataclass(frozen=True)
class HeaderIncome:
    cashback: Decimal
    regular: Decimal

    @property
    def total(self) -> Decimal:
        return self.cashback + self.regular

    @property
    def ratio(self) -> float:
        return 0.0 if self.total == 0 else float(self.cashback / self.total)


def header_income(store: str, txns: Iterable[Transaction], cashback: Mapping[str, Decimal],
                  commission: Decimal = COMMISSION_RATE) -> HeaderIncome:
    """Income of the header running ``store``: cashback on its promoted sales plus commission on revenue."""
    c = Decimal(0)
    revenue = Decimal(0)
    for t in txns:
        if t.relation(RelationKind.RETAIL_STORE) != store:
            continue
        revenue += t.revenue
        promo = t.relation(RelationKind.PROMOTION)
        if promo is not None:
            c += cashback.get(promo, Decimal(0))
    return HeaderIncome(c, commission * revenue)


def ratio_stats(stores: Iterable[str], txns: Sequence[Transaction], cashback: Mapping[str, Decimal],
                commission: Decimal = COMMISSION_RATE, base: Optional[RuleStats] = None) -> RuleStats:
    by_store: dict[str, list[Transaction]] = defaultdict(list)
    for t in txns:
        s = t.relation(RelationKind.RETAIL_STORE)
        if s is not None:
            by_store[s].append(t)
    ratios = [header_income(s, by_store[s], cashback, commission).ratio for s in stores if by_store.get(s)]
    out = base if base is not None else RuleStats()
    out.ratio_mean = float(np.mean(ratios)) if ratios else 0.0
    out.ratio_std = float(np.std(ratios)) if ratios else 0.0
    return out


def rule2_flag(store: str, txns: Sequence[Transaction], cashback: Mapping[str, Decimal], stats: RuleStats,
               commission: Decimal = COMMISSION_RATE) -> bool:
    """Flag cashback abuse when the header's cashback share of income reaches the bound."""
    income = header_income(store, txns, cashback, commission)
    if income.total == 0:
        return False
    return income.ratio >= stats.ratio_bound


def fit_rule_stats(txns: Sequence[Transaction], labels: Mapping[str, int], cashback: Mapping[str, Decimal],
                   commission: Decimal = COMMISSION_RATE, kappa: float = KAPPA) -> RuleStats:
    """Quantity stats over label-0 users; ratio stats over stores with no labeled fraudster."""
    normal = [u for u, y in labels.items() if y == NORMAL]
    stats = quantity_stats(txns, normal, kappa)
    tainted, stores = set(), set()
    for t in txns:
        s = t.relation(RelationKind.RETAIL_STORE)
        if s is None:
            continue
        stores.add(s)
        if labels.get(t.user_id) == FRAUD:
            tainted.add(s)
    return ratio_stats(sorted(stores - tainted), txns, cashback, commission, stats)


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0


@dataclass(frozen=True)
class Metrics:
    """None marks a metric whose denominator is zero."""

    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    accuracy: Optional[float]

    def as_dict(self) -> dict[str, Optional[float]]:
        return asdict(self)


def _ratio(num: float, den: float) -> Optional[float]:
    return None if den == 0 else num / den


def from_confusion(c: Confusion) -> Metrics:
    p = _ratio(c.tp, c.tp + c.fp)
    r = _ratio(c.tp, c.tp + c.fn)
    if p is None or r is None:
        f1 = None
    else:
        f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return Metrics(p, r, f1, _ratio(c.tp + c.tn, c.tp + c.fp + c.fn + c.tn))


EXCLUDE, ORACLE = "exclude", "oracle"


def confusion(predicted: Iterable[str], labels: Mapping[str, int], policy: str = EXCLUDE,
              truth: Optional[Iterable[str]] = None, universe: Optional[Iterable[str]] = None) -> Confusion:
    """Confusion counts over the scored population.

    ``exclude`` scores only users labeled 0 or 1. ``oracle`` scores every user in
    ``universe`` (default: all labeled keys) against the ``truth`` set.
    """
    pred = set(predicted)
    if policy == EXCLUDE:
        scored = {u: y == FRAUD for u, y in labels.items() if y in (FRAUD, NORMAL)}
    elif policy == ORACLE:
        if truth is None:
            raise ValueError("oracle policy needs the ground-truth fraud set")
        fraud = set(truth)
        pool = set(labels) if universe is None else set(universe)
        scored = {u: u in fraud for u in pool | fraud}
    else:
        raise ValueError(f"unknown policy {policy!r}")
    tp = sum(1 for u, y in scored.items() if y and u in pred)
    fp = sum(1 for u, y in scored.items() if not y and u in pred)
    fn = sum(1 for u, y in scored.items() if y and u not in pred)
    return Confusion(tp, fp, fn, len(scored) - tp - fp - fn)


def metrics(predicted: Iterable[str] | Confusion, labels: Optional[Mapping[str, int]] = None,
            treat_unknown: str = EXCLUDE, truth: Optional[Iterable[str]] = None,
            universe: Optional[Iterable[str]] = None) -> Metrics:
    if isinstance(predicted, Confusion):
        return from_confusion(predicted)
    if labels is None:
        raise ValueError("labels are required unless a Confusion is given")
    return from_confusion(confusion(predicted, labels, treat_unknown, truth, universe))


def avoided_losses(blocked: Iterable[Transaction]) -> Decimal:
    total = Decimal(0)
    for t in blocked:
        if t.gross_margin is None:
            raise ValueError(f"transaction {t.txn_id} has no gross margin")
        total -= t.gross_margin
    return total


def metrics_report(values: Mapping[str, object]) -> str:
    lines = []
    for k, v in values.items():
        lines.append(f"{k}={'undefined' if v is None else v}")
    return "\n".join(lines) + "\n"


def save_metrics(values: Mapping[str, object], text_path: str | Path, json_path: str | Path,
                 preamble: Sequence[str] = ()) -> None:
    head = "".join(f"# {p}\n" for p in preamble)
    Path(text_path).write_text(head + metrics_report(values), encoding="utf-8", newline="\n")
    Path(json_path).write_text(json.dumps(dict(values), indent=2, sort_keys=True) + "\n", encoding="utf-8",
                               newline="\n")


def fmt(v: Optional[float]) -> str:
    return "undefined" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"
