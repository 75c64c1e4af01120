import numpy as np
import pytest
from hypothesis import given, strategies as st

from fusedfraud import detect
from fusedfraud.graph import FusedGraph
from fusedfraud.txn import N_RELATIONS


def graph_from(nodes, edge_weights):
    """edge_weights: {(u, v): [w_1..w_8]}"""
    index = {u: i for i, u in enumerate(nodes)}
    keys = sorted((tuple(sorted((index[u], index[v]))), w) for (u, v), w in edge_weights.items())
    edges = np.array([k for k, _ in keys], dtype=np.int64).reshape(-1, 2)
    weights = np.array([w for _, w in keys], dtype=float).reshape(-1, N_RELATIONS)
    return FusedGraph(tuple(nodes), edges, weights > 0, weights)


class TestSeeds:
    def test_thousand_users(self):
        scores = {f"u{i:04d}": float(i) for i in range(1000)}
        seeds = detect.select_seeds(scores, 0.012)
        assert len(seeds) == 12
        assert seeds == {f"u{i:04d}" for i in range(988, 1000)}

    def test_ties_go_to_smallest_ids(self):
        scores = {f"u{i:03d}": 1.0 for i in range(200)}
        assert detect.select_seeds(scores, 0.012) == {"u000", "u001", "u002"}

    def test_ten_users(self):
        scores = {f"u{i}": s for i, s in enumerate([0.1, 0.9, 0.3, 0.2, 0.5, 0.4, 0.8, 0.7, 0.6, 0.0])}
        assert detect.select_seeds(scores, 0.012) == {"u1"}

    def test_empty(self):
        with pytest.raises(ValueError):
            detect.select_seeds({}, 0.012)

    @pytest.mark.parametrize("q", [0.0, 1.0, -0.1, 1.5])
    def test_bad_quantile(self, q):
        with pytest.raises(ValueError):
            detect.select_seeds({"a": 1.0}, q)

    @given(st.integers(1, 5000), st.floats(0.0005, 0.5))
    def test_count_is_ceiling(self, n, q):
        k = detect.seed_count(n, q)
        assert k >= q * n - 1e-6 and k - 1 < q * n + 1e-6 and 1 <= k <= n


class TestPropagationScore:
    def test_zero_alpha(self):
        assert detect.propagation_score(0.0, [1, 1, 1, 1, 1, 1, 1, 1]) == 0.0

    def test_example(self):
        assert detect.propagation_score(0.2, [1, 1, 1, 0.25, 0, 0, 0, 0]) == pytest.approx(0.65)

    def test_single_relation(self):
        assert detect.propagation_score(1.0, [0.8, 0, 0, 0, 0, 0, 0, 0]) == pytest.approx(0.8)


class TestPropagate:
    def test_boundary_not_flagged(self):
        g = graph_from(["s", "a"], {("s", "a"): [0.65, 0, 0, 0, 0, 0, 0, 0]})
        assert detect.propagate(g, {"s"}, np.array([1.0]), 0.65) == set()

    def test_above_threshold(self):
        g = graph_from(["s", "a"], {("s", "a"): [0.66, 0, 0, 0, 0, 0, 0, 0]})
        assert detect.propagate(g, {"s"}, np.array([1.0]), 0.65) == {"a"}

    def test_nothing_above(self):
        g = graph_from(["s", "a", "b"], {("s", "a"): [0.3] + [0] * 7, ("s", "b"): [0.5] + [0] * 7})
        assert detect.propagate(g, {"s"}, np.array([1.0, 1.0]), 0.65) == set()

    def test_single_pass(self):
        g = graph_from(["s", "a", "b"], {("s", "a"): [0.9] + [0] * 7, ("a", "b"): [0.9] + [0] * 7})
        assert detect.propagate(g, {"s"}, np.ones(2), 0.65) == {"a"}

    def test_either_orientation(self):
        g = graph_from(["a", "z"], {("a", "z"): [0.9] + [0] * 7})
        assert detect.propagate(g, {"z"}, np.ones(1), 0.65) == {"a"}

    def test_seeds_not_repeated(self):
        g = graph_from(["s", "t"], {("s", "t"): [0.9] + [0] * 7})
        assert detect.propagate(g, {"s", "t"}, np.ones(1), 0.65) == set()

    def test_unknown_seed(self):
        g = graph_from(["s", "a"], {("s", "a"): [0.9] + [0] * 7})
        with pytest.raises(KeyError):
            detect.propagate(g, {"nobody"}, np.ones(1), 0.65)


class TestGroups:
    def test_shared_store(self, make_txn):
        txns = [make_txn("u1", retail_store="S"), make_txn("u2", retail_store="S"), make_txn("u3", retail_store="S")]
        assert detect.group_detections({"u1", "u2"}, txns) == {"S": {"u1", "u2"}}

    def test_two_stores(self, make_txn):
        txns = [make_txn("u1", retail_store="S"), make_txn("u1", retail_store="T")]
        assert detect.group_detections({"u1"}, txns) == {"S": {"u1"}, "T": {"u1"}}

    def test_none(self, make_txn):
        assert detect.group_detections(set(), [make_txn("u1", retail_store="S")]) == {}

    def test_largest_first(self, make_txn):
        txns = [make_txn("a", retail_store="T"), make_txn("b", retail_store="S"), make_txn("c", retail_store="S")]
        assert list(detect.group_detections({"a", "b", "c"}, txns)) == ["S", "T"]


def test_detect_without_propagation_is_subset(make_txn):
    g = graph_from(["a", "b", "c"], {("a", "b"): [0.9] + [0] * 7, ("b", "c"): [0.2] + [0] * 7})
    scores = np.array([3.0, 1.0, 2.0])
    full = detect.detect(g, scores, np.ones(2), [], 0.3)
    seeds_only = detect.detect(g, scores, np.ones(2), [], 0.3, propagation=False)
    assert full.seeds == {"a"} and full.propagated == {"b"}
    assert seeds_only.predicted <= full.predicted


def test_result_rejects_overlap():
    with pytest.raises(ValueError):
        detect.DetectionResult({"a": 1.0}, {"a"}, {"a"})


def test_report_round_trip(tmp_path, make_txn):
    g = graph_from(["a", "b", "c"], {("a", "b"): [0.9] + [0] * 7})
    res = detect.detect(g, np.array([0.1, 0.5, 0.25]), np.ones(1), [make_txn("b", retail_store="S")], 0.3)
    detect.save_detection(res, tmp_path / "d.csv", tmp_path / "g.csv", ["config_sha256=0"])
    back = detect.load_report(tmp_path / "d.csv")
    assert back.scores == res.scores and back.seeds == res.seeds and back.propagated == res.propagated
    assert res.predicted == {"a", "b"}
    assert (tmp_path / "g.csv").read_text().splitlines() == ["# config_sha256=0", "retail_store,user_id", "S,b"]
