import math

import numpy as np
import pytest

import pvgc


def brute_knn(x, k, dilation):
    n = len(x)
    d = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    rows = []
    for i in range(n):
        order = sorted((d[i, j], j) for j in range(n) if j != i)
        ranks = list(range(0, len(order), dilation))[:k]
        rows.append([order[r][1] for r in ranks])
    return np.array(rows)


def test_knn_matches_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, dim = rng.integers(2, 40), rng.integers(1, 6)
        k, dilation = int(rng.integers(1, 9)), int(rng.integers(1, 3))
        x = rng.normal(size=(n, dim))
        np.testing.assert_array_equal(pvgc.knn(x, k, dilation), brute_knn(x, k, dilation))


def test_knn_ties_and_errors():
    np.testing.assert_array_equal(pvgc.knn(np.full((5, 1), 0.5), 2), [[1, 2], [0, 2], [0, 1], [0, 1], [0, 1]])
    with pytest.raises(pvgc.DegenerateGraphError):
        pvgc.knn(np.zeros((1, 3)), 2)
    assert [pvgc.dilation_for_layer(l) for l in (1, 4, 5, 8, 9)] == [1, 1, 2, 2, 3]


def test_squash_norms():
    rng = np.random.default_rng(1)
    s = rng.normal(size=(1000, 8)) * np.logspace(-3, 3, 1000)[:, None]
    v = pvgc.squash(s)
    n2 = (s**2).sum(-1)
    np.testing.assert_allclose(np.linalg.norm(v, axis=-1), n2 / (1 + n2), rtol=0, atol=1e-12)
    assert (np.linalg.norm(v, axis=-1) < 1).all()


def test_routing_couplings_are_distributions():
    rng = np.random.default_rng(2)
    v, couplings = pvgc.dynamic_routing(rng.normal(size=(2, 12, 3, 4)), 3)
    assert v.shape == (2, 3, 4)
    assert len(couplings) == 3
    for c in couplings:
        np.testing.assert_allclose(c.sum(-1), 1.0, atol=1e-12)


def test_losses():
    assert pvgc.margin_loss(np.array([[0.4, 0.1]]), [0]) == pytest.approx(0.25, abs=1e-12)
    assert pvgc.margin_loss(np.array([[0.9, 0.6]]), [0]) == pytest.approx(0.125, abs=1e-12)
    assert pvgc.cross_entropy(np.zeros((1, 7)), [2]) == pytest.approx(math.log(7), abs=1e-9)
    with pytest.raises(pvgc.ContractError):
        pvgc.margin_loss(np.array([[0.4, 0.1]]), [5])


def test_metrics_fixture():
    r = pvgc.compute_metrics([5, 1, 1, 3], 2)
    assert r["accuracy"] == pytest.approx(0.8, abs=1e-12)
    assert r["f1"][1] == pytest.approx(0.75, abs=1e-12)


def test_census_directions():
    pooling = pvgc.census("tiny", pvgc.overrides(head="pooling-mlp"))
    capsule = pvgc.census("tiny", pvgc.overrides(head="capsule"))
    assert capsule["params"] < pooling["params"]
    assert capsule["flops"] > pooling["flops"]
    assert sum(e["params"] for e in capsule["entries"]) == capsule["params"]


def test_model_forward_and_config_errors():
    model = pvgc.Model("micro", pvgc.overrides(classes=3), seed=1)
    assert model.head == "capsule"
    images = np.random.default_rng(3).normal(size=(2, 3, 32, 32))
    out = model.forward(images)
    assert out["scores"].shape == (2, 3)
    assert out["capsules"].shape == (2, 3, 8)
    assert ((out["scores"] >= 0) & (out["scores"] < 1)).all()
    np.testing.assert_array_equal(model.forward(images)["scores"], out["scores"])
    with pytest.raises(pvgc.ConfigError):
        pvgc.Model("micro", ["classes=1"])
    assert "classes = 3" in pvgc.resolved_config("micro", ["classes=3"])


def test_gradcheck_small():
    errors = pvgc.gradcheck(instances=1)
    assert errors
    assert max(errors.values()) <= 1e-4


def test_train_synthetic_is_deterministic():
    a = pvgc.train_synthetic(classes=2, per_class=4, epochs=2, seed=5)
    b = pvgc.train_synthetic(classes=2, per_class=4, epochs=2, seed=5)
    assert [h["train_loss"] for h in a["history"]] == [h["train_loss"] for h in b["history"]]
    assert len(a["history"]) == 2
    assert a["metrics"]["samples"] == 8
