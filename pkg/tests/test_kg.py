import numpy as np
import pytest

from fusedfraud import kg
from fusedfraud.kg import RelationEmbeddings, TransRParams
from fusedfraud.txn import N_RELATIONS


def one_dim(ei, ej, er, w):
    params = TransRParams(np.array([[ei], [ej]], float), np.full((N_RELATIONS, 1), er, float),
                          np.full((N_RELATIONS, 1, 1), w, float))
    return params


class TestScore:
    def test_perfect_triple(self):
        rng = np.random.default_rng(0)
        p = kg.init_transr(2, 4, 3, rng=rng)
        p.relation[2] = p.entity[1] @ p.projection[2] - p.entity[0] @ p.projection[2]
        assert kg.transr_score(p, 0, 2, 1) == pytest.approx(0.0, abs=1e-12)

    def test_equal_entities_zero_relation(self):
        p = one_dim(0.3, 0.3, 0.0, 1.7)
        assert kg.transr_score(p, 0, 0, 1) == 0.0

    def test_hand_value(self):
        assert kg.transr_score(one_dim(1.0, 0.0, 0.5, 2.0), 0, 0, 1) == pytest.approx(2.5)

    def test_unknown_indices(self):
        p = one_dim(1.0, 0.0, 0.5, 2.0)
        with pytest.raises(KeyError):
            kg.transr_score(p, 0, 0, 5)
        with pytest.raises(KeyError):
            kg.transr_score(p, 0, 9, 1)


class TestMarginLoss:
    def setup_method(self):
        self.p = one_dim(1.0, 0.0, 0.0, 1.0)  # f(0,r,1) = 1, f(0,r,0) = 0

    def test_satisfied_margin(self):
        # f(pos) = 0, f(neg) = 2 = margin + 1
        p = one_dim(2.0, 0.0, 0.0, 1.0)
        assert kg.margin_loss(p, np.array([[1, 0, 1]]), np.array([[0, 0, 1]]), margin=1.0) == 0.0

    def test_equal_scores(self):
        pos = np.array([[0, 0, 1], [0, 1, 1]])
        assert kg.margin_loss(self.p, pos, pos.copy(), margin=1.0) == pytest.approx(2.0)

    def test_empty(self):
        empty = np.zeros((0, 3), int)
        assert kg.margin_loss(self.p, empty, empty) == 0.0

    def test_negative_margin(self):
        with pytest.raises(ValueError):
            kg.margin_loss(self.p, np.array([[0, 0, 1]]), np.array([[0, 0, 1]]), margin=-0.5)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            kg.margin_loss(self.p, np.array([[0, 0, 1]]), np.zeros((0, 3), int))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    n = 15
    p = kg.init_transr(n, 5, 4, rng=rng)
    p.projection += rng.normal(scale=0.3, size=p.projection.shape)
    pos = np.stack([rng.integers(n, size=40), rng.integers(N_RELATIONS, size=40), rng.integers(n, size=40)], 1)
    neg = pos.copy()
    neg[:, 2] = rng.integers(n, size=40)
    _, g = kg.margin_loss_grad(p, pos, neg)
    h = 1e-6
    for name in ("entity", "relation", "projection"):
        arr, grad = getattr(p, name), getattr(g, name)
        for _ in range(10):
            idx = tuple(rng.integers(s) for s in arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            up = kg.margin_loss(p, pos, neg)
            arr[idx] = old - h
            down = kg.margin_loss(p, pos, neg)
            arr[idx] = old
            num = (up - down) / (2 * h)
            assert abs(num - grad[idx]) <= 1e-4 * max(1.0, abs(num)), (name, idx)


def test_symmetric_positives():
    out = kg.symmetric_positives(np.array([[0, 1, 2], [2, 1, 0], [3, 0, 4]]))
    assert out.tolist() == [[0, 1, 2], [2, 1, 0], [3, 0, 4], [4, 0, 3]]


def test_corrupt_tails_avoids_positives():
    rng = np.random.default_rng(0)
    pos = kg.symmetric_positives(np.array([[i, 0, (i + 1) % 30] for i in range(30)]))
    known = np.sort(kg._keys(pos, 30))
    neg = kg.corrupt_tails(pos, known, 30, rng)
    assert np.array_equal(neg[:, :2], pos[:, :2])
    assert not np.isin(kg._keys(neg, 30), known).any()


def ring_triples(n=100, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for r in range(N_RELATIONS):
        for _ in range(60):
            a, b = rng.choice(n, 2, replace=False)
            rows.append((min(a, b), r, max(a, b)))
    return np.unique(np.array(rows), axis=0)


def test_constraints_hold_after_training():
    p, _ = kg.fit_transr(ring_triples(), 100, epochs=5, seed=1)
    assert np.all(np.linalg.norm(p.entity, axis=1) <= 1 + 1e-9)
    assert np.all(np.linalg.norm(p.relation, axis=1) <= 1 + 1e-9)
    assert np.linalg.svd(p.projection, compute_uv=False).max() <= 1 + 1e-9


def clustered_triples(n=100, size=10, seed=0):
    # relations only inside clusters of consecutive users, so held-out triples are predictable
    rng = np.random.default_rng(seed)
    rows = set()
    while len(rows) < 600:
        c = rng.integers(n // size)
        a, b = sorted(rng.choice(size, 2, replace=False) + c * size)
        rows.add((a, int(rng.integers(N_RELATIONS)), b))
    return np.array(sorted(rows))


def test_holdout_loss_decreases():
    trip = clustered_triples()
    rng = np.random.default_rng(9)
    held = rng.permutation(len(trip))[:40]
    train_mask = np.ones(len(trip), bool)
    train_mask[held] = False
    _, hist = kg.fit_transr(trip[train_mask], 100, epochs=60, seed=2, holdout=trip[held])
    assert hist.holdout_loss[-1] < hist.holdout_loss[0]
    assert hist.train_loss[-1] < hist.train_loss[0]


def test_train_transr_deterministic_and_unit():
    trip = ring_triples(seed=3)
    a = kg.train_transr(trip, 100, epochs=10, seed=5)
    b = kg.train_transr(trip, 100, epochs=10, seed=5)
    assert np.array_equal(a.vectors, b.vectors)
    assert np.allclose(np.linalg.norm(a.vectors, axis=1), 1.0)


def test_empty_triples_rejected():
    with pytest.raises(ValueError):
        kg.fit_transr(np.zeros((0, 3), int), 5)


def test_embedding_validation():
    with pytest.raises(ValueError):
        RelationEmbeddings(np.zeros((3, 8)))
    with pytest.raises(ValueError):
        RelationEmbeddings(np.full((8, 2), np.nan))


def test_relation_csv_round_trip(tmp_path):
    emb = RelationEmbeddings(np.random.default_rng(0).normal(size=(8, 8)))
    p = tmp_path / "rel.csv"
    kg.save_relation_embeddings(emb, p, ["config_sha256=1"])
    assert np.array_equal(kg.load_relation_embeddings(p).vectors, emb.vectors)
