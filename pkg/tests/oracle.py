"""Independent brute-force evaluation of the fused-graph definitions, used as a test oracle."""

from __future__ import annotations

import math
import random
from decimal import Decimal

from fusedfraud.txn import N_RELATIONS, Transaction, make_relations, RelationKind


def brute_force_graph(txns, lam=1.0):
    """{(u, v): {r: w}} by looping over every user pair, relation and day."""
    users = sorted({t.user_id for t in txns})
    days = sorted({t.day for t in txns})
    by_user = {u: [t for t in txns if t.user_id == u] for u in users}
    out = {}
    for a in range(len(users)):
        for b in range(a + 1, len(users)):
            u, v = users[a], users[b]
            rel = {}
            for r in range(N_RELATIONS):
                pair = 0
                for d in days:
                    hit = any(
                        x.day == d and y.day == d and x.product_id == y.product_id
                        and x.relations[r] is not None and x.relations[r] == y.relations[r]
                        for x in by_user[u] for y in by_user[v]
                    )
                    pair += hit
                if pair == 0:
                    continue
                solo_u = len({t.day for t in by_user[u] if t.relations[r] is not None})
                solo_v = len({t.day for t in by_user[v] if t.relations[r] is not None})
                top = max(solo_u, solo_v)
                rel[r] = pair / top / (1.0 + math.exp(-lam * top))
            if rel:
                out[(u, v)] = rel
    return out


def random_log(rng: random.Random, max_users=20, max_days=10):
    """A small dense log: few products and few values so relations collide often."""
    n_users = rng.randint(2, max_users)
    n_days = rng.randint(1, max_days)
    txns = []
    for k in range(rng.randint(1, 4 * n_users)):
        rel = {RelationKind(r): f"v{rng.randint(0, 2)}" for r in range(N_RELATIONS) if rng.random() < 0.4}
        txns.append(Transaction(
            txn_id=f"t{k}", user_id=f"u{rng.randrange(n_users):02d}", product_id=f"p{rng.randint(0, 2)}",
            day=rng.randint(1, n_days), quantity=1, price=Decimal("1"), relations=make_relations(rel),
        ))
    return txns
