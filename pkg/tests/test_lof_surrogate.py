import itertools
from math import factorial

import numpy as np
import pytest
from sklearn.neighbors import LocalOutlierFactor

from tatk.attribution import (LOF, kernel_shap, lime, lof_kernel_shap, lof_lime, lof_score,
                              similarity_score)
from tatk.attribution.lof import DegenerateNeighborhoodWarning
from tatk.attribution.surrogate import SingularSystemWarning, weighted_lstsq
from tatk.models import MLP, LinearModel


def grid(n=5):
    return np.array([[i, j] for i in range(n) for j in range(n)], dtype=float)


# -- LOF ---------------------------------------------------------------------

def test_lof_matches_sklearn_on_tie_free_data():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 4))
    Q = rng.normal(size=(15, 4)) * 1.5
    for k in (1, 3, 7):
        ref = LocalOutlierFactor(n_neighbors=k, novelty=True).fit(X)
        ours, _ = LOF(X, k).score(Q)
        np.testing.assert_allclose(ours, -ref.score_samples(Q), rtol=1e-10)


def test_grid_center_is_an_inlier():
    assert lof_score([2.0, 2.0], grid(), k=4) == pytest.approx(1.0, abs=0.2)
    assert lof_score([2.5, 2.5], grid(), k=4) == pytest.approx(1.0, abs=0.2)


def test_far_point_is_an_outlier():
    rng = np.random.default_rng(1)
    cluster = rng.uniform(0, 1, size=(20, 2))
    diameter = np.ptp(cluster, axis=0).max()
    assert lof_score([100 * diameter, 0.0], cluster, k=5) > 10


def test_copies_are_clamped_with_unit_lof():
    k = 3
    X = np.ones((k + 1, 2))
    with pytest.warns(DegenerateNeighborhoodWarning):
        assert lof_score(X[0], X, k=k) == 1.0


def test_lof_validation():
    with pytest.raises(ValueError, match="k\\+1"):
        LOF(np.zeros((3, 2)), k=3)
    with pytest.raises(ValueError):
        LOF(np.zeros((3, 2)), k=0)
    with pytest.raises(ValueError, match="dimension"):
        LOF(grid(), 2).score(np.zeros((1, 3)))


def test_similarity_score():
    np.testing.assert_array_equal(similarity_score(np.array([0.5, 1.0, 4.0])), [1.0, 1.0, 0.25])


# -- surrogates --------------------------------------------------------------

def brute_shapley(model, x):
    """Shapley values from the factorial formula over every coalition."""
    T, N = x.shape
    d = T * N

    def value(S):
        z = np.zeros(d)
        z[list(S)] = 1.0
        return model.predict((z.reshape(T, N) * x)[None])[0, 0]

    phi = np.zeros(d)
    for j in range(d):
        others = [i for i in range(d) if i != j]
        for r in range(d):
            for S in itertools.combinations(others, r):
                w = factorial(r) * factorial(d - r - 1) / factorial(d)
                phi[j] += w * (value(S + (j,)) - value(S))
    return phi.reshape(T, N)


def test_exhaustive_kernel_shap_on_nonlinear_model():
    rng = np.random.default_rng(2)
    model = MLP([6, 5, 1], seed=3)
    x = rng.normal(size=(2, 3))
    a = kernel_shap(model, x, n_samples="exhaustive")
    np.testing.assert_allclose(a.values, brute_shapley(model, x), atol=1e-10)


def test_constant_model_gives_zero_coefficients():
    rng = np.random.default_rng(3)
    model = LinearModel(np.zeros((3, 2)), bias=1.5)
    x = rng.normal(size=(3, 2))
    bg = rng.normal(size=(10, 3, 2))
    runs = [lime(model, x, n_samples=40), lime(model, x, n_samples=40, kernel="uniform"),
            lof_lime(model, x, n_samples=40, background=bg), kernel_shap(model, x),
            kernel_shap(model, x, n_samples=40), lof_kernel_shap(model, x, background=bg)]
    for a in runs:
        np.testing.assert_allclose(a.values, 0.0, atol=1e-10)


def test_far_background_gives_equal_small_weights_and_same_ranking():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(3, 2))
    x = rng.normal(size=(3, 2))
    bg = rng.normal(size=(12, 3, 2)) * 0.01 + 1000.0
    model = LinearModel(w)
    a = lof_lime(model, x, n_samples=60, background=bg, seed=1)
    b = lime(model, x, n_samples=60, kernel="uniform", seed=1)
    np.testing.assert_allclose(a.values, w * x, atol=1e-8)
    assert np.array_equal(np.argsort(a.values, axis=None), np.argsort(b.values, axis=None))
    sims = similarity_score(LOF(bg.reshape(12, -1), 5).score(x.reshape(1, -1) * [[1], [0]])[0])
    assert sims.max() < 1e-3
    assert sims.max() / sims.min() == pytest.approx(1.0, abs=1e-2)


def test_lof_kernel_needs_background():
    x = np.zeros((2, 2))
    with pytest.raises(ValueError, match="background"):
        lof_lime(LinearModel(np.ones((2, 2))), x, n_samples=20)


def test_sample_count_is_checked():
    x = np.zeros((3, 2))
    with pytest.raises(ValueError, match="n_samples"):
        lime(LinearModel(np.ones((3, 2))), x, n_samples=7)
    with pytest.raises(ValueError, match="n_samples"):
        kernel_shap(LinearModel(np.ones((3, 2))), x, n_samples=7)


def test_singular_system_falls_back_to_ridge():
    A = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    y = np.array([2.0, 4.0, 6.0])
    with pytest.warns(SingularSystemWarning):
        b = weighted_lstsq(A, y, np.ones(3))
    np.testing.assert_allclose(A @ b, y, atol=1e-5)


def test_kernel_shap_efficiency_when_sampled():
    rng = np.random.default_rng(5)
    model = MLP([12, 6, 1], seed=1)
    x = rng.normal(size=(4, 3))
    a = kernel_shap(model, x, n_samples=64, seed=2)
    f = model.predict(np.stack([x, np.zeros_like(x)]))[:, 0]
    assert a.values.sum() == pytest.approx(f[0] - f[1], abs=1e-12)
