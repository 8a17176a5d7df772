import itertools

import numpy as np
import pytest

from basecagg import models


def data(n=12, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    X, y, _ = models.gaussian_mixture(n, dim, 2.0, rng)
    return X, y


def finite_diff(f, w, h=1e-6):
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


@pytest.mark.parametrize("model", [models.LogReg(3), models.MLP(3, hidden=4)])
def test_gradient_matches_finite_differences(model):
    X, y = data()
    w = model.init(np.random.default_rng(1)) + np.random.default_rng(2).normal(0, 0.3, model.n_params)
    num = finite_diff(lambda v: models.loss(model, v, X, y, 0.01), w)
    np.testing.assert_allclose(models.grad_oracle(model, w, X, y, 0.01), num, rtol=1e-5, atol=1e-7)


def test_zero_weights_give_log2_loss():
    X, y = data()
    assert models.loss(models.LogReg(3), np.zeros(4), X, y) == pytest.approx(np.log(2))


def test_regulariser_only_gradient():
    w = np.array([1.0, -2.0, 0.5, 3.0])
    g = models.grad_oracle(models.LogReg(3), w, np.zeros((0, 3)), np.zeros(0), lam=0.1)
    np.testing.assert_allclose(g, 0.1 * w)


def test_minibatch_gradient_is_unbiased_by_enumeration():
    X, y = data(n=8)
    model = models.LogReg(3)
    w = np.array([0.3, -0.1, 0.7, 0.05])
    batches = list(itertools.combinations(range(8), 3))
    mean = sum(models.grad_oracle(model, w, X[list(b)], y[list(b)], 5e-4) for b in batches) / len(batches)
    np.testing.assert_allclose(mean, models.grad_oracle(model, w, X, y, 5e-4), rtol=1e-12, atol=1e-15)


def test_partition_is_disjoint_and_covering():
    parts = models.partition_iid(103, 10, np.random.default_rng(0))
    joined = np.concatenate(parts)
    assert len(parts) == 10 and sorted(joined.tolist()) == list(range(103))
    assert {len(p) for p in parts} <= {10, 11}


def test_csv_round_trip(tmp_path):
    X, y = data(n=5)
    path = tmp_path / "d.csv"
    models.save_csv(path, X, y)
    assert path.read_text().splitlines()[0] == "x0,x1,x2,label"
    X2, y2 = models.load_csv(path)
    assert np.array_equal(X, X2) and np.array_equal(y, y2)


def test_sigmoid_is_stable_for_large_logits():
    model = models.LogReg(1)
    X = np.array([[1e4], [-1e4]])
    g = model.data_grad(np.array([1.0, 0.0]), X, np.array([1.0, 0.0]))
    assert np.all(np.isfinite(g))


def test_accuracy():
    model = models.LogReg(1)
    X = np.array([[1.0], [-1.0], [2.0]])
    assert models.accuracy(model, np.array([1.0, 0.0]), X, np.array([1.0, 0.0, 0.0])) == pytest.approx(2 / 3)
