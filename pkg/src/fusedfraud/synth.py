"""Synthetic transaction logs with planted stocking-up and cashback-abuse groups.

The background traffic model is a declared choice: every user has a home
retail store, a home geohash under that store, a household address and a home
group chat, and buys uniformly random products at a per-user daily rate. Planted
groups coordinate on the same products on the same days through shared
relation values, on top of their members' ordinary background purchases.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, asdict
from decimal import Decimal
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .txn import FRAUD, NORMAL, UNKNOWN, LabelSet, RelationKind, Transaction, make_relations, read_csv_rows

STOCKING, CASHBACK, MIXED = "stocking", "cashback", "mixed"
GROUP_COLUMNS = ("group_id", "user_id", "type", "is_header")
CASHBACK_COLUMNS = ("promotion_id", "cashback")

# background model constants
USERS_PER_STORE = 50
GEOHASHES_PER_STORE = 5
USERS_PER_CHAT = 10
USERS_PER_ADDRESS = 2
PROMOTED_SHARE = 0.2
LOW_COST_SHARE = 0.4
N_COUPONS = 50
STORES_PER_REGION = 10
N_STIMULATIONS = 20
NORMAL_QTY = (1, 3)
STOCKING_QTY = (6, 12)
BACKGROUND_SHARE = 0.82
NORMAL_LABEL_SHARE = 0.07
CASHBACK_PER_TXN = Decimal("1.50")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    n_users: int = 5000
    n_products: int = 300
    n_days: int = 7
    fraud_fraction: float = 0.015
    n_stocking_groups: int = 4
    n_cashback_groups: int = 4
    n_mixed_groups: int = 2
    group_size_range: tuple[int, int] = (5, 7)
    normal_txn_rate: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.group_size_range
        if lo < 2 or hi < lo:
            raise ScenarioError(f"group_size_range must satisfy 2 <= min <= max, got {self.group_size_range}")
        if not 0.0 <= self.fraud_fraction <= 1.0:
            raise ScenarioError(f"fraud_fraction must be in [0, 1], got {self.fraud_fraction}")
        if min(self.n_stocking_groups, self.n_cashback_groups, self.n_mixed_groups) < 0:
            raise ScenarioError("group counts must be non-negative")
        if self.n_users < 1 or self.n_products < 1 or self.n_days < 1:
            raise ScenarioError("n_users, n_products and n_days must be positive")
        if self.normal_txn_rate < 0:
            raise ScenarioError("normal_txn_rate must be non-negative")

    @property
    def n_groups(self) -> int:
        return self.n_stocking_groups + self.n_cashback_groups + self.n_mixed_groups


@dataclass(frozen=True)
class PlantedGroup:
    group_id: str
    kind: str
    members: tuple[str, ...]
    header: str
    store: str
    products: tuple[str, ...] = ()


@dataclass(frozen=True)
class GroundTruthGroups:
    groups: tuple[PlantedGroup, ...] = ()

    def __iter__(self):
        return iter(self.groups)

    def __len__(self) -> int:
        return len(self.groups)

    def members(self) -> set[str]:
        return {u for g in self.groups for u in g.members}

    def of_kind(self, *kinds: str) -> list[PlantedGroup]:
        return [g for g in self.groups if g.kind in kinds]


class Scenario(NamedTuple):
    transactions: list[Transaction]
    labels: LabelSet
    groups: GroundTruthGroups
    cashback: dict[str, Decimal]

    def ground_truth_groups(self) -> GroundTruthGroups:
        return self.groups


@dataclass
class _Product:
    pid: str
    price: Decimal
    promotion: Optional[str]
    low_cost: bool


@dataclass
class _Profile:
    store: str
    geohash: str
    address: str
    chat: str
    rate: float


@dataclass
class _Builder:
    txns: list[tuple[int, str, str, int, Decimal, Decimal, dict]] = field(default_factory=list)

    def add(self, day, user, product: _Product, qty, relations, promoted: bool) -> None:
        unit_margin = Decimal("-0.15") if promoted else Decimal("0.20")
        gm = (product.price * unit_margin * qty).quantize(Decimal("0.01"))
        self.txns.append((day, user, product.pid, qty, product.price, gm, relations))


def _feasible_sizes(cfg: ScenarioConfig, rng: np.random.Generator) -> list[int]:
    lo, hi = cfg.group_size_range
    sizes = [int(rng.integers(lo, hi + 1)) for _ in range(cfg.n_groups)]
    budget = cfg.fraud_fraction * cfg.n_users
    if sum(sizes) > budget + 1e-9:
        raise ScenarioError(
            f"planted membership {sum(sizes)} exceeds fraud budget {budget:g} "
            f"(fraud_fraction={cfg.fraud_fraction}, n_users={cfg.n_users})"
        )
    return sizes


def generate(cfg: ScenarioConfig) -> Scenario:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    sizes = _feasible_sizes(cfg, rng)

    width = len(str(cfg.n_users - 1))
    users = [f"u{i:0{width}d}" for i in range(cfg.n_users)]
    n_stores = max(1, cfg.n_users // USERS_PER_STORE)
    n_chats = max(1, cfg.n_users // USERS_PER_CHAT)
    n_addresses = max(1, cfg.n_users // USERS_PER_ADDRESS)

    products: list[_Product] = []
    for k in range(cfg.n_products):
        low_cost = rng.random() < LOW_COST_SHARE
        cents = int(rng.integers(100, 301)) if low_cost else int(rng.integers(500, 3001))
        promoted = rng.random() < PROMOTED_SHARE
        products.append(_Product(f"p{k:04d}", Decimal(cents) / 100, f"promo{k:04d}" if promoted else None, low_cost))

    profiles = {}
    for u in users:
        store = int(rng.integers(n_stores))
        profiles[u] = _Profile(
            store=f"s{store:04d}",
            geohash=f"g{store:04d}{int(rng.integers(GEOHASHES_PER_STORE))}",
            address=f"a{int(rng.integers(n_addresses)):05d}",
            chat=f"c{int(rng.integers(n_chats)):05d}",
            rate=float(rng.gamma(2.0, cfg.normal_txn_rate / 2.0)),
        )

    # planted membership
    order = rng.permutation(cfg.n_users)
    kinds = [STOCKING] * cfg.n_stocking_groups + [CASHBACK] * cfg.n_cashback_groups + [MIXED] * cfg.n_mixed_groups
    group_stores = rng.choice(n_stores, size=len(kinds), replace=len(kinds) > n_stores) if kinds else []
    cursor = 0
    planted: list[PlantedGroup] = []
    for g, (kind, size) in enumerate(zip(kinds, sizes)):
        members = tuple(sorted(users[int(i)] for i in order[cursor:cursor + size]))
        cursor += size
        header = members[int(rng.integers(size))]
        planted.append(PlantedGroup(f"g{g:03d}", kind, members, header, f"s{int(group_stores[g]):04d}"))
    fraud_users = {u for grp in planted for u in grp.members}

    builder = _Builder()

    def background(user: str, days: Sequence[int]) -> None:
        prof = profiles[user]
        for day in days:
            for _ in range(int(rng.poisson(prof.rate))):
                _background_txn(builder, rng, cfg, user, day, prof, products, n_stores, n_addresses)

    all_days = list(range(1, cfg.n_days + 1))
    for u in users:
        if u in fraud_users:
            continue
        background(u, all_days)
    for u in sorted(fraud_users):
        if rng.random() < BACKGROUND_SHARE:
            before = len(builder.txns)
            background(u, all_days)
            if len(builder.txns) == before:
                day = int(rng.integers(1, cfg.n_days + 1))
                _background_txn(builder, rng, cfg, u, day, profiles[u], products, n_stores, n_addresses)

    stocking_pool = [p for p in products if p.promotion and not p.low_cost]
    cashback_pool = [p for p in products if p.promotion and p.low_cost]
    if not stocking_pool:
        stocking_pool = [p for p in products if p.promotion] or products
    if not cashback_pool:
        cashback_pool = [p for p in products if p.promotion] or products

    for i, grp in enumerate(planted):
        chosen: list[_Product] = []
        if grp.kind in (STOCKING, MIXED):
            chosen += _plant_stocking(builder, rng, cfg, grp, profiles, stocking_pool)
        if grp.kind in (CASHBACK, MIXED):
            chosen += _plant_cashback(builder, rng, cfg, grp, profiles, cashback_pool)
        planted[i] = PlantedGroup(grp.group_id, grp.kind, grp.members, grp.header, grp.store,
                                  tuple(sorted({p.pid for p in chosen})))

    # canonical order: by day, then generation order
    rows = sorted(enumerate(builder.txns), key=lambda item: (item[1][0], item[0]))
    id_width = max(6, len(str(len(rows))))
    txns = [
        Transaction(
            txn_id=f"t{n:0{id_width}d}", user_id=user, product_id=pid, day=day, quantity=qty,
            price=price, gross_margin=gm, relations=make_relations(rel),
        )
        for n, (_, (day, user, pid, qty, price, gm, rel)) in enumerate(rows)
    ]

    labels: dict[str, int] = {}
    for u in users:
        if u in fraud_users:
            labels[u] = FRAUD
        elif rng.random() < NORMAL_LABEL_SHARE:
            labels[u] = NORMAL
        else:
            labels[u] = UNKNOWN
    regions = [f"s{k * STORES_PER_REGION:04d}" for k in range((n_stores + STORES_PER_REGION - 1) // STORES_PER_REGION)]
    cashback = {_regional(p.promotion, s): CASHBACK_PER_TXN for p in cashback_pool if p.promotion for s in regions}
    return Scenario(txns, LabelSet(labels), GroundTruthGroups(tuple(planted)), dict(sorted(cashback.items())))


def _regional(promotion: Optional[str], store: str) -> Optional[str]:
    # promotions run per region of STORES_PER_REGION consecutive stores
    if promotion is None:
        return None
    return f"{promotion}r{int(store[1:]) // STORES_PER_REGION:03d}"


def _background_txn(builder, rng, cfg, user, day, prof, products, n_stores, n_addresses) -> None:
    product = products[int(rng.integers(len(products)))]
    rel: dict[RelationKind, str] = {}
    rel[RelationKind.ORDER_LOCATION] = prof.geohash if rng.random() < 0.9 else (
        f"g{int(rng.integers(n_stores)):04d}{int(rng.integers(GEOHASHES_PER_STORE))}")
    if rng.random() < 0.05:
        rel[RelationKind.SHARE_LINK] = f"l{int(rng.integers(10 * cfg.n_users)):07d}"
    if rng.random() < 0.7:
        rel[RelationKind.DELIVERY] = prof.address
    rel[RelationKind.RETAIL_STORE] = prof.store if rng.random() < 0.85 else f"s{int(rng.integers(n_stores)):04d}"
    if rng.random() < 0.1:
        rel[RelationKind.GROUP_ID] = prof.chat
    promoted = product.promotion is not None and rng.random() < 0.5
    if promoted:
        rel[RelationKind.PROMOTION] = _regional(product.promotion, prof.store)
    if rng.random() < 0.2:
        rel[RelationKind.COUPON] = f"cp{int(rng.integers(N_COUPONS)):03d}"
    if rng.random() < 0.1:
        rel[RelationKind.STIMULATION] = f"st{int(rng.integers(N_STIMULATIONS)):03d}"
    qty = int(rng.integers(NORMAL_QTY[0], NORMAL_QTY[1] + 1))
    builder.add(day, user, product, qty, rel, promoted)


def _plant_stocking(builder, rng, cfg, grp: PlantedGroup, profiles, pool) -> list[_Product]:
    n_items = min(len(pool), int(rng.integers(1, 3)))
    bundle = [pool[int(i)] for i in rng.choice(len(pool), size=n_items, replace=False)]
    n_active = int(rng.integers(min(3, cfg.n_days), min(5, cfg.n_days) + 1))
    days = sorted(int(d) for d in rng.choice(np.arange(1, cfg.n_days + 1), size=n_active, replace=False))
    channel = [RelationKind.SHARE_LINK, RelationKind.ORDER_LOCATION, RelationKind.GROUP_ID][int(rng.integers(3))]
    shared = {
        RelationKind.SHARE_LINK: f"l{grp.group_id}",
        RelationKind.ORDER_LOCATION: profiles[grp.header].geohash,
        RelationKind.GROUP_ID: f"c{grp.group_id}",
    }[channel]
    coupon = f"cp{int(rng.integers(N_COUPONS)):03d}"
    for day in days:
        for product in bundle:
            for user in grp.members:
                rel = {
                    RelationKind.ORDER_LOCATION: profiles[user].geohash,
                    RelationKind.RETAIL_STORE: grp.store,
                    RelationKind.PROMOTION: _regional(product.promotion, grp.store),
                    channel: shared,
                }
                if rng.random() < 0.7:
                    rel[RelationKind.DELIVERY] = profiles[user].address
                if rng.random() < 0.3:
                    rel[RelationKind.COUPON] = coupon
                qty = int(rng.integers(STOCKING_QTY[0], STOCKING_QTY[1] + 1))
                builder.add(day, user, product, qty, {k: v for k, v in rel.items() if v is not None}, True)
    return bundle


def _plant_cashback(builder, rng, cfg, grp: PlantedGroup, profiles, pool) -> list[_Product]:
    n_items = min(len(pool), 2)
    items = [pool[int(i)] for i in rng.choice(len(pool), size=n_items, replace=False)]
    stimulation = f"st{int(rng.integers(N_STIMULATIONS)):03d}"
    coupon = f"cp{int(rng.integers(N_COUPONS)):03d}"
    for day in range(1, cfg.n_days + 1):
        for user in grp.members:
            if rng.random() < 0.1:
                continue
            for _ in range(int(rng.integers(1, 3))):
                product = items[int(rng.integers(len(items)))]
                rel = {
                    RelationKind.ORDER_LOCATION: profiles[user].geohash,
                    RelationKind.RETAIL_STORE: grp.store,
                    RelationKind.PROMOTION: _regional(product.promotion, grp.store),
                    RelationKind.STIMULATION: stimulation,
                }
                if rng.random() < 0.5:
                    rel[RelationKind.COUPON] = coupon
                if rng.random() < 0.5:
                    rel[RelationKind.GROUP_ID] = f"c{grp.group_id}"  # header's chat
                builder.add(day, user, product, 1, {k: v for k, v in rel.items() if v is not None}, True)
    return items


def format_groups(groups: GroundTruthGroups, preamble: Sequence[str] = ()) -> str:
    out = io.StringIO()
    for line in preamble:
        out.write(f"# {line}\n")
    out.write(",".join(GROUP_COLUMNS) + "\n")
    for g in groups:
        for u in g.members:
            out.write(f"{g.group_id},{u},{g.kind},{int(u == g.header)}\n")
    return out.getvalue()


def write_groups(groups: GroundTruthGroups, path: str | Path, preamble: Sequence[str] = ()) -> None:
    Path(path).write_text(format_groups(groups, preamble), encoding="utf-8", newline="\n")


def load_groups(path: str | Path) -> GroundTruthGroups:
    by_id: dict[str, dict] = {}
    for row in read_csv_rows(path):
        entry = by_id.setdefault(row["group_id"], {"kind": row["type"], "members": [], "header": ""})
        entry["members"].append(row["user_id"])
        if row["is_header"] == "1":
            entry["header"] = row["user_id"]
    return GroundTruthGroups(tuple(
        PlantedGroup(gid, e["kind"], tuple(e["members"]), e["header"], "") for gid, e in by_id.items()
    ))


def write_cashback(schedule: dict[str, Decimal], path: str | Path, preamble: Sequence[str] = ()) -> None:
    out = io.StringIO()
    for line in preamble:
        out.write(f"# {line}\n")
    out.write(",".join(CASHBACK_COLUMNS) + "\n")
    for promo, amount in schedule.items():
        out.write(f"{promo},{amount}\n")
    Path(path).write_text(out.getvalue(), encoding="utf-8", newline="\n")


def load_cashback(path: str | Path) -> dict[str, Decimal]:
    return {row["promotion_id"]: Decimal(row["cashback"]) for row in read_csv_rows(path)}


def config_dict(cfg: ScenarioConfig) -> dict:
    return asdict(cfg)
