"""Transaction data model and the comma-delimited log format."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence


class RelationKind(IntEnum):
    ORDER_LOCATION = 0
    SHARE_LINK = 1
    DELIVERY = 2
    RETAIL_STORE = 3
    GROUP_ID = 4
    PROMOTION = 5
    COUPON = 6
    STIMULATION = 7

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def column(self) -> str:
        return f"r{int(self) + 1}"

    @classmethod
    def from_label(cls, label: str) -> "RelationKind":
        for kind, name in _LABELS.items():
            if name == label:
                return kind
        raise ValueError(f"unknown relation label {label!r}")


_LABELS = {
    RelationKind.ORDER_LOCATION: "Order Location",
    RelationKind.SHARE_LINK: "Share Link",
    RelationKind.DELIVERY: "Delivery",
    RelationKind.RETAIL_STORE: "Retail Store",
    RelationKind.GROUP_ID: "Group ID",
    RelationKind.PROMOTION: "Promotion",
    RelationKind.COUPON: "Coupon",
    RelationKind.STIMULATION: "Stimulation",
}

N_RELATIONS = len(RelationKind)

TXN_COLUMNS = (
    "txn_id", "user_id", "product_id", "day", "quantity", "price", "gross_margin",
) + tuple(kind.column for kind in RelationKind)

LABEL_COLUMNS = ("user_id", "label")

FRAUD, NORMAL, UNKNOWN = 1, 0, -1


class DataFormatError(ValueError):
    """Raised for malformed transaction or label files."""


@dataclass(frozen=True)
class Transaction:
    txn_id: str
    user_id: str
    product_id: str
    day: int
    quantity: int
    price: Decimal
    gross_margin: Optional[Decimal] = None
    # one slot per RelationKind; None means the field was empty
    relations: tuple[Optional[str], ...] = (None,) * N_RELATIONS

    def __post_init__(self) -> None:
        if len(self.relations) != N_RELATIONS:
            raise ValueError(f"expected {N_RELATIONS} relation slots, got {len(self.relations)}")
        if self.quantity < 1:
            raise ValueError(f"quantity must be >= 1, got {self.quantity}")
        if self.price < 0:
            raise ValueError(f"price must be non-negative, got {self.price}")

    @property
    def relation_values(self) -> dict[RelationKind, str]:
        return {RelationKind(i): v for i, v in enumerate(self.relations) if v is not None}

    def relation(self, kind: RelationKind) -> Optional[str]:
        return self.relations[int(kind)]

    @property
    def revenue(self) -> Decimal:
        return self.price * self.quantity


def make_relations(values: Mapping[RelationKind, str]) -> tuple[Optional[str], ...]:
    slots: list[Optional[str]] = [None] * N_RELATIONS
    for kind, value in values.items():
        slots[int(kind)] = value
    return tuple(slots)


class LabelSet(Mapping[str, int]):
    """User labels; any user not present reads as unknown (-1)."""

    def __init__(self, labels: Optional[Mapping[str, int]] = None):
        self._labels = dict(labels or {})
        for user, label in self._labels.items():
            if label not in (FRAUD, NORMAL, UNKNOWN):
                raise ValueError(f"label for {user!r} must be -1, 0 or 1, got {label}")

    def __getitem__(self, user: str) -> int:
        return self._labels[user]

    def __iter__(self):
        return iter(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def label(self, user: str) -> int:
        return self._labels.get(user, UNKNOWN)

    def users_with(self, label: int) -> list[str]:
        return [u for u, y in self._labels.items() if y == label]

    def __repr__(self) -> str:
        return f"LabelSet({len(self._labels)} users)"


def _data_lines(text: str) -> Iterable[tuple[int, str]]:
    # leading '#' lines carry provenance (config hash) and are skipped
    started = False
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not started and line.startswith("#"):
            continue
        started = True
        if line.strip() == "":
            continue
        yield lineno, line


def _read_rows(path: Path, expected_header: Sequence[str]) -> list[tuple[int, list[str]]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    lines = list(_data_lines(path.read_text(encoding="utf-8")))
    if not lines:
        return []
    header_no, header = lines[0]
    header_cells = header.rstrip("\r").split(",")
    if tuple(header_cells) != tuple(expected_header):
        raise DataFormatError(
            f"header mismatch at line {header_no}: expected {','.join(expected_header)}, got {header}"
        )
    rows = []
    for lineno, line in lines[1:]:
        cells = line.rstrip("\r").split(",")
        if len(cells) != len(expected_header):
            raise DataFormatError(
                f"expected {len(expected_header)} columns at line {lineno}, got {len(cells)}"
            )
        rows.append((lineno, cells))
    return rows


def _parse_int(value: str, what: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise DataFormatError(f"invalid {what} at line {lineno}: {value!r}") from None


def _parse_decimal(value: str, what: str, lineno: int) -> Decimal:
    try:
        parsed = Decimal(value)
    except InvalidOperation:
        raise DataFormatError(f"invalid {what} at line {lineno}: {value!r}") from None
    if not parsed.is_finite():
        raise DataFormatError(f"invalid {what} at line {lineno}: {value!r}")
    return parsed


def load_transactions(path: str | Path, schema: Sequence[str] = TXN_COLUMNS) -> list[Transaction]:
    """Load a transaction log in file order; any malformed row aborts the load."""
    txns: list[Transaction] = []
    seen: set[str] = set()
    for lineno, cells in _read_rows(Path(path), schema):
        row = dict(zip(schema, cells))
        txn_id = row["txn_id"]
        if not txn_id:
            raise DataFormatError(f"empty txn_id at line {lineno}")
        if txn_id in seen:
            raise DataFormatError(f"duplicate txn_id {txn_id!r} at line {lineno}")
        seen.add(txn_id)
        day = _parse_int(row["day"], "day", lineno)
        quantity = _parse_int(row["quantity"], "quantity", lineno)
        if quantity < 1:
            raise DataFormatError(f"invalid quantity at line {lineno}: {row['quantity']!r}")
        price = _parse_decimal(row["price"], "price", lineno)
        if price < 0:
            raise DataFormatError(f"invalid price at line {lineno}: {row['price']!r}")
        gm = row["gross_margin"]
        gross_margin = _parse_decimal(gm, "gross_margin", lineno) if gm else None
        relations = tuple(row[kind.column] or None for kind in RelationKind)
        txns.append(
            Transaction(
                txn_id=txn_id,
                user_id=row["user_id"],
                product_id=row["product_id"],
                day=day,
                quantity=quantity,
                price=price,
                gross_margin=gross_margin,
                relations=relations,
            )
        )
    return txns


def format_transactions(txns: Iterable[Transaction], preamble: Sequence[str] = ()) -> str:
    out = io.StringIO()
    for line in preamble:
        out.write(f"# {line}\n")
    out.write(",".join(TXN_COLUMNS) + "\n")
    for t in txns:
        cells = [
            t.txn_id, t.user_id, t.product_id, str(t.day), str(t.quantity), str(t.price),
            "" if t.gross_margin is None else str(t.gross_margin),
        ]
        cells.extend(v or "" for v in t.relations)
        out.write(",".join(cells) + "\n")
    return out.getvalue()


def write_transactions(txns: Iterable[Transaction], path: str | Path, preamble: Sequence[str] = ()) -> None:
    Path(path).write_text(format_transactions(txns, preamble), encoding="utf-8", newline="\n")


def window(txns: Iterable[Transaction], end_day: int, T: int) -> list[Transaction]:
    """Transactions with ``end_day - T < day <= end_day``, order preserved."""
    if T < 1:
        raise ValueError(f"window length T must be >= 1, got {T}")
    return [t for t in txns if end_day - T < t.day <= end_day]


def load_labels(path: str | Path) -> LabelSet:
    labels: dict[str, int] = {}
    for lineno, (user, raw) in _read_rows(Path(path), LABEL_COLUMNS):
        label = _parse_int(raw, "label", lineno)
        if label not in (FRAUD, NORMAL, UNKNOWN):
            raise DataFormatError(f"label outside {{-1,0,1}} at line {lineno}: {raw!r}")
        if user in labels:
            raise DataFormatError(f"duplicate user_id {user!r} at line {lineno}")
        labels[user] = label
    return LabelSet(labels)


def write_labels(labels: Mapping[str, int], path: str | Path, preamble: Sequence[str] = ()) -> None:
    out = io.StringIO()
    for line in preamble:
        out.write(f"# {line}\n")
    out.write(",".join(LABEL_COLUMNS) + "\n")
    for user, label in labels.items():
        out.write(f"{user},{label}\n")
    Path(path).write_text(out.getvalue(), encoding="utf-8", newline="\n")


def read_preamble(path: str | Path) -> dict[str, str]:
    """Key=value pairs from the leading '#' lines of an artifact."""
    meta: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                meta[key.strip()] = value.strip()
    return meta


def read_csv_rows(path: str | Path) -> list[dict[str, str]]:
    """Plain DictReader over an artifact CSV, skipping its '#' preamble."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))
