from decimal import Decimal

import pytest

from fusedfraud.txn import (
    TXN_COLUMNS, UNKNOWN, DataFormatError, LabelSet, RelationKind, load_labels, load_transactions, read_preamble,
    window, write_labels, write_transactions,
)

HEADER = ",".join(TXN_COLUMNS)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_three_rows_load_in_order(tmp_path):
    rows = [
        "t1,u1,p1,1,2,3.50,0.40,g1,,,s1,,,,",
        "t2,u2,p1,1,1,3.50,,g1,,,s1,,promo1,,",
        "t3,u1,p2,2,1,9.99,-1.00,,,,,,,,",
    ]
    txns = load_transactions(write(tmp_path, "t.csv", "\n".join([HEADER] + rows) + "\n"))
    assert [t.txn_id for t in txns] == ["t1", "t2", "t3"]
    assert txns[0].quantity == 2 and txns[0].price == Decimal("3.50")
    assert txns[1].gross_margin is None
    assert txns[2].gross_margin == Decimal("-1.00")


def test_single_relation_value(tmp_path):
    p = write(tmp_path, "t.csv", HEADER + "\nt1,u1,p1,1,1,1.00,,g7,,,,,,,\n")
    (t,) = load_transactions(p)
    assert t.relation_values == {RelationKind.ORDER_LOCATION: "g7"}


def test_negative_quantity_names_line(tmp_path):
    p = write(tmp_path, "t.csv", HEADER + "\nt1,u1,p1,1,1,1.00,,,,,,,,,\nt2,u1,p1,1,-1,1.00,,,,,,,,,\n")
    with pytest.raises(DataFormatError, match="invalid quantity at line 3"):
        load_transactions(p)


@pytest.mark.parametrize("bad", ["t1,u1,p1,x,1,1.00,,,,,,,,,", "t1,u1,p1,1,1,-2,,,,,,,,,", "t1,u1,p1,1,1,1.00,,,"])
def test_malformed_rows_rejected(tmp_path, bad):
    with pytest.raises(DataFormatError):
        load_transactions(write(tmp_path, "t.csv", HEADER + "\n" + bad + "\n"))


def test_duplicate_txn_id(tmp_path):
    p = write(tmp_path, "t.csv", HEADER + "\nt1,u1,p1,1,1,1.00,,,,,,,,,\nt1,u2,p1,1,1,1.00,,,,,,,,,\n")
    with pytest.raises(DataFormatError, match="duplicate"):
        load_transactions(p)


def test_wrong_header(tmp_path):
    with pytest.raises(DataFormatError):
        load_transactions(write(tmp_path, "t.csv", "a,b,c\n"))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_transactions(tmp_path / "absent.csv")


def test_round_trip_with_preamble(tmp_path, make_txn):
    txns = [make_txn("u1", day=3, qty=2, price="2.25", promotion="pr1", retail_store="s1"),
            make_txn("u2", gm=None, coupon="c9")]
    p = tmp_path / "t.csv"
    write_transactions(txns, p, ["config_sha256=abc"])
    assert read_preamble(p) == {"config_sha256": "abc"}
    assert load_transactions(p) == txns


class TestWindow:
    def days(self, make_txn, days):
        return [make_txn("u1", day=d) for d in days]

    def test_last_week(self, make_txn):
        out = window(self.days(make_txn, range(1, 15)), 14, 7)
        assert sorted({t.day for t in out}) == list(range(8, 15))

    def test_whole_range(self, make_txn):
        out = window(self.days(make_txn, range(1, 15)), 14, 14)
        assert sorted({t.day for t in out}) == list(range(1, 15))

    def test_before_data(self, make_txn):
        assert window(self.days(make_txn, range(1, 15)), 0, 7) == []

    def test_bad_length(self, make_txn):
        with pytest.raises(ValueError):
            window([], 5, 0)


class TestLabels:
    def test_load_and_unknown(self, tmp_path):
        labels = load_labels(write(tmp_path, "l.csv", "user_id,label\nu1,1\nu2,0\n"))
        assert dict(labels) == {"u1": 1, "u2": 0}
        assert labels.label("u3") == UNKNOWN

    def test_label_two_rejected(self, tmp_path):
        with pytest.raises(DataFormatError):
            load_labels(write(tmp_path, "l.csv", "user_id,label\nu1,2\n"))

    def test_empty_file(self, tmp_path):
        labels = load_labels(write(tmp_path, "l.csv", ""))
        assert len(labels) == 0 and labels.label("anyone") == UNKNOWN

    def test_round_trip(self, tmp_path):
        p = tmp_path / "l.csv"
        write_labels({"a": 1, "b": -1, "c": 0}, p, ["x=1"])
        assert dict(load_labels(p)) == {"a": 1, "b": -1, "c": 0}

    def test_labelset_validates(self):
        with pytest.raises(ValueError):
            LabelSet({"u": 5})
