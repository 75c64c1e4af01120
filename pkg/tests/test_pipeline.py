import numpy as np
import pytest

from fusedfraud import pipeline, synth
from fusedfraud.config import PipelineConfig
from fusedfraud.txn import RelationKind


def test_window_defaults_to_latest_day(make_txn):
    txns = [make_txn("a", day=d) for d in range(1, 11)]
    got = pipeline.select_window(txns, PipelineConfig(window_days=3))
    assert sorted({t.day for t in got}) == [8, 9, 10]
    got = pipeline.select_window(txns, PipelineConfig(window_days=3, end_day=5))
    assert sorted({t.day for t in got}) == [3, 4, 5]
    assert pipeline.select_window([], PipelineConfig()) == []


def test_variant_configs():
    cfg = PipelineConfig()
    assert pipeline.train_config(cfg, "full").use_relation_loss
    r = pipeline.train_config(cfg, "-R")
    assert not r.use_relation_loss and not r.freeze_relations
    assert pipeline.train_config(cfg, "-W").unit_weights
    with pytest.raises(ValueError):
        pipeline.train_config(cfg, "-Q")


def test_uniform_relations_for_r_ablation():
    emb = pipeline.relation_embeddings(None, PipelineConfig(), "-R")
    assert np.allclose(emb.vectors, emb.vectors[0]) and np.allclose(np.linalg.norm(emb.vectors, axis=1), 1)


def test_grids():
    assert len(pipeline.TP_GRID) == 11 and pipeline.TP_GRID[0] == 0.4 and pipeline.TP_GRID[-1] == 0.9
    assert pipeline.TS_GRID == (0.004, 0.008, 0.012, 0.016, 0.02, 0.024)


def test_blocked_transactions(make_txn):
    txns = [make_txn("a", promotion="x"), make_txn("a"), make_txn("b", promotion="x")]
    assert pipeline.blocked_transactions({"a"}, txns) == txns[:1]


@pytest.fixture(scope="module")
def scenario():
    cfg = PipelineConfig(n_users=800, fraud_fraction=0.08, seed=2)
    sc = synth.generate(pipeline.scenario_config(cfg))
    return cfg, sc, pipeline.build_graph(sc.transactions, cfg)


def test_normal_groups_share_store(scenario):
    cfg, sc, graph = scenario
    groups = pipeline.normal_store_groups(graph, sc.transactions, sc.labels, [4, 5], np.random.default_rng(0))
    assert [len(g) for g in groups] == [4, 5]
    fraud = sc.groups.members()
    for g in groups:
        assert not fraud & set(g) and all(u in graph for u in g)
        stores = [{t.relation(RelationKind.RETAIL_STORE) for t in sc.transactions if t.user_id == u} for u in g]
        assert set.intersection(*stores)


def test_normal_groups_too_large(scenario):
    cfg, sc, graph = scenario
    with pytest.raises(ValueError):
        pipeline.normal_store_groups(graph, sc.transactions, sc.labels, [10_000], np.random.default_rng(0))


def test_tcs_table_layout(scenario):
    cfg, sc, graph = scenario
    fraud = [list(g.members) for g in sc.groups]
    normal = pipeline.normal_store_groups(graph, sc.transactions, sc.labels, [len(g) for g in fraud],
                                          np.random.default_rng(1))
    rows = pipeline.tcs_table(graph, fraud, normal)
    assert [r for r, _, _ in rows] == list(RelationKind)
    for _, f, n in rows:
        assert f is None or 0 <= f <= 1
        assert n is None or 0 <= n <= 1
