import numpy as np
import pytest

import splitmetric as sm


@pytest.fixture(scope="module")
def corpus():
    return sm.synth({"n_chains": 12, "branches_per_chain": 5, "images_per_branch": 10, "seed": 3})


def labels_of(catalog):
    return {r[0]: r[1] for r in catalog.records()}


def test_catalog_roundtrip(tmp_path):
    cat = sm.Catalog([("a", "b1", "c1"), ("b", "b1", "c1"), ("c", "b2", None)])
    assert len(cat) == 3
    assert cat.stats()["unknown_branches"] == 1
    cat.save(tmp_path / "c.csv")
    assert sm.Catalog.load(tmp_path / "c.csv").records() == cat.records()


def test_conflicting_chain_raises():
    with pytest.raises(sm.SplitmetricError):
        sm.Catalog([("a", "b1", "c1"), ("b", "b1", "c2")])


def test_dedup_merges_shared_key():
    cat = sm.Catalog([("i1", "b1", "c1", "k"), ("i2", "b2", "c1", "k")])
    merged, report = cat.dedup()
    assert len(merged) == 1
    assert report["dropped"] == ["i2"]


def test_splits_verify(corpus):
    cat, _ = corpus
    splits = sm.generate_splits(cat, seed=1, uu_frac=0.2, su_frac=0.2, t1=10, t2=2)
    assert set(splits) == {r[0] for r in cat.records()}
    report = sm.verify_splits(cat, splits, t2=2)
    assert all(c["passed"] for c in report["checks"])
    assert sm.generate_splits(cat, seed=1, uu_frac=0.2, su_frac=0.2, t1=10, t2=2) == splits
    counts = sm.split_counts(cat, splits)
    assert counts["total"]["images"] == len(cat)


def test_auroc():
    assert sm.auroc([0.9, 0.8], [0.3, 0.1]) == 1.0
    assert sm.auroc([0.5], [0.5]) == 0.5


def test_embeddings_io(tmp_path, corpus):
    _, feats = corpus
    feats.write(tmp_path / "f.emb")
    back = sm.Embeddings.read(tmp_path / "f.emb")
    assert back.ids == feats.ids
    np.testing.assert_array_equal(back.data, feats.data)


def test_knn_excludes_self():
    e = sm.Embeddings(["a", "b", "c"], np.array([[1, 0], [0.9, 0.1], [0, 1]], dtype=np.float32)).normalized()
    nn = sm.cosine_knn(e, e, 1, exclude_self=True)
    assert [row[0][0] for row in nn] == [1, 0, 1]


@pytest.mark.parametrize("kind", sm.loss_kinds())
def test_loss_gradients(kind):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(16, 8))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    labels = [i % 4 for i in range(16)]
    params = {"proxynca": {"temperature": 1.0}}
    bank = None
    if kind in ("proxynca", "softtriple"):
        rows = 4 if kind == "proxynca" else 4 * 5
        bank = rng.normal(size=(rows, 8))
        bank /= np.linalg.norm(bank, axis=1, keepdims=True)
    value, grad, grad_bank = sm.compute_loss(kind, x, labels, params, bank)
    assert value >= 0 and grad.shape == x.shape
    assert (grad_bank is None) == (bank is None)
    assert sm.finite_diff_check(kind, x, labels, 1e-5, params, bank) < 1e-4


def test_train_and_evaluate(corpus):
    cat, feats = corpus
    splits = sm.generate_splits(cat, seed=1, uu_frac=0.2, su_frac=0.2, t1=10, t2=2)
    out = sm.train(cat, splits, feats, {"loss": "triplet", "epochs": 2, "d_out": 8})
    assert len(out["history"]) == 2
    assert out["weight"].shape == (8, 32)
    test_ids = [i for i, s in splits.items() if s == "test_su"]
    emb = out["embeddings"].select(test_ids)
    labels = labels_of(cat)
    pool = sm.mine_hard_negatives(feats.select(test_ids), labels, 5)
    report = sm.evaluate(emb, labels, repeats=3, hard_pool=pool)
    assert 0 <= report["auc"]["mean"] <= 1
    assert len(report["auc"]["values"]) == 3
    assert "auc_h" in report
