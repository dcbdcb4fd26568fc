import itertools

import numpy as np
import pytest

from tokenjigsaw.numerics import (NumericsError, _assign, fix_signs, kmeans_assign, kmeans_fit,
                                  pca_fit, pca_inverse_transform, pca_transform, subsample_rows)


def _svd_oracle(X, d):
    """Principal axes from the SVD of the centred data (a different route from eigh)."""
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    return fix_signs(vt[:d]), (s[:d] ** 2) / (len(X) - 1)


@pytest.mark.parametrize("seed", range(5))
def test_pca_matches_svd_oracle(seed):
    rng = np.random.default_rng(seed)
    # anisotropic data so the spectrum has no near-ties
    X = rng.normal(size=(300, 12)) * np.linspace(3.0, 0.2, 12) @ np.linalg.qr(rng.normal(size=(12, 12)))[0]
    d = 6
    model = pca_fit(X, d)
    comps, var = _svd_oracle(X, d)
    assert np.abs(model.components - comps).max() <= 1e-6
    assert np.abs(model.explained_variance - var).max() <= 1e-6 * var.max()


def test_pca_eigen_residual():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 8)) @ rng.normal(size=(8, 8))
    model = pca_fit(X, 8)
    cov = np.cov(X, rowvar=False)
    for v, lam in zip(model.components, model.explained_variance):
        assert np.abs(cov @ v - lam * v).max() <= 1e-6 * model.explained_variance[0]


def test_pca_components_orthonormal():
    X = np.random.default_rng(2).normal(size=(500, 48))
    W = pca_fit(X, 32).components
    assert np.abs(W @ W.T - np.eye(32)).max() <= 1e-8


def test_pca_sign_convention_and_order():
    X = np.random.default_rng(3).normal(size=(100, 5)) * [5, 4, 3, 2, 1]
    m = pca_fit(X, 5)
    assert np.all(np.diff(m.explained_variance) <= 0)
    for row in m.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_pca_full_rank_roundtrip():
    X = np.random.default_rng(4).normal(size=(50, 6))
    m = pca_fit(X, 6)
    np.testing.assert_allclose(pca_inverse_transform(m, pca_transform(m, X)), X, atol=1e-10)


def test_pca_rejects_bad_d():
    X = np.zeros((5, 3))
    for d in (0, 4):
        with pytest.raises(NumericsError):
            pca_fit(X, d)
    with pytest.raises(NumericsError):
        pca_fit(np.zeros((1, 3)), 1)


def _naive_assign(X, C):
    labels = []
    for x in X:
        best, arg = None, None
        for j, c in enumerate(C):
            d = float(((x - c) ** 2).sum())
            if best is None or d < best:
                best, arg = d, j
        labels.append(arg)
    return np.array(labels)


def test_assign_matches_naive_oracle():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(400, 7))
    C = rng.normal(size=(13, 7))
    np.testing.assert_array_equal(_assign(X, C)[0], _naive_assign(X, C))


def test_assign_ties_lowest_index():
    C = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    X = np.array([[0.0, 0.0], [0.0, 2.0], [5.0, 5.0]])
    labels = _assign(X, C)[0]
    assert labels[0] == 0  # equidistant to 0, 1, 2, 3
    assert labels[1] == 2  # duplicate centroids 2 and 3


def _is_lloyd_fixed_point(X, C, tol=1e-9):
    labels = _naive_assign(X, C)
    d = ((X[:, None, :] - C[None]) ** 2).sum(-1)
    if np.any(d[np.arange(len(X)), labels] > d.min(axis=1) + tol):
        return False
    for j in range(len(C)):
        members = X[labels == j]
        if len(members) and np.abs(members.mean(axis=0) - C[j]).max() > 1e-7:
            return False
    return True


def _global_optimum(X, k):
    best = np.inf
    for lab in itertools.product(range(k), repeat=len(X)):
        lab = np.array(lab)
        cost = sum(((X[lab == j] - X[lab == j].mean(axis=0)) ** 2).sum()
                   for j in range(k) if np.any(lab == j))
        best = min(best, cost)
    return best


def test_kmeans_local_optimality_100_cases():
    for case in range(100):
        rng = np.random.default_rng(1000 + case)
        n = int(rng.integers(4, 13))
        k = int(rng.integers(1, min(5, n) + 1))
        X = rng.normal(size=(n, 2)) + rng.integers(0, 3, size=(n, 1)) * 3.0
        km = kmeans_fit(X, k, seed=case)
        assert _is_lloyd_fixed_point(X, km.centroids), case
        assert np.all(np.diff(km.inertia_history) <= 0), case
        labels = kmeans_assign(km, X)
        assert np.isclose(km.inertia, ((X - km.centroids[labels]) ** 2).sum(), rtol=1e-12, atol=1e-12)
        if n <= 8 and k <= 3:
            assert km.inertia >= _global_optimum(X, k) - 1e-9


def test_kmeans_inertia_monotone_large():
    X = np.random.default_rng(6).normal(size=(3000, 8))
    km = kmeans_fit(X, 64, seed=1, max_iter=50)
    assert np.all(np.diff(km.inertia_history) <= 0)
    assert km.iterations_run <= 50


def test_kmeans_deterministic_and_duplicates():
    X = np.repeat(np.random.default_rng(7).normal(size=(6, 3)), 5, axis=0)
    a = kmeans_fit(X, 6, seed=3)
    b = kmeans_fit(X, 6, seed=3)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    assert a.inertia <= 1e-20
    with pytest.raises(NumericsError):
        kmeans_fit(X[:3], 4, seed=0)


def test_subsample_rows():
    X = np.arange(100.0)[:, None]
    s = subsample_rows(X, 10, seed=0)
    assert s.shape == (10, 1) and np.all(np.diff(s[:, 0]) > 0)
    np.testing.assert_array_equal(s, subsample_rows(X, 10, seed=0))
    assert subsample_rows(X, 200, seed=0) is X
