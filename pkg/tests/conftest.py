from __future__ import annotations

from decimal import Decimal
from itertools import count
from typing import Optional

import pytest

from fusedfraud.txn import RelationKind, Transaction, make_relations

_ids = count()


def txn(user: str, product: str = "p1", day: int = 1, qty: int = 1, price: str = "1.00",
        gm: Optional[str] = "0.10", **relations: str) -> Transaction:
    """Build a transaction; relation keywords use RelationKind member names in lower case."""
    rel = {RelationKind[k.upper()]: v for k, v in relations.items()}
    return Transaction(
        txn_id=f"t{next(_ids):06d}", user_id=user, product_id=product, day=day, quantity=qty,
        price=Decimal(price), gross_margin=None if gm is None else Decimal(gm), relations=make_relations(rel),
    )


@pytest.fixture
def make_txn():
    return txn


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
