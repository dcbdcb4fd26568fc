"""PCA and k-means in float64.

Both fits are deterministic: PCA is an exact symmetric eigendecomposition of
the sample covariance with a fixed sign convention, and k-means draws its
k-means++ seeding from an explicit PCG64 seed.
"""
from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng


class NumericsError(ValueError):
    pass


@dataclass
class PcaModel:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (d, D), rows orthonormal
    explained_variance: np.ndarray  # (d,)

    @property
    def n_components(self):
        return self.components.shape[0]

    @property
    def n_features(self):
        return self.components.shape[1]


@dataclass
class KMeansModel:
    centroids: np.ndarray  # (k, d)
    inertia: float
    iterations_run: int
    inertia_history: list = field(default_factory=list)

    @property
    def k(self):
        return self.centroids.shape[0]


def _as_matrix(X, name="X"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise NumericsError(f"{name} must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NumericsError(f"{name} contains non-finite entries")
    return X


def fix_signs(components):
    """Flip each row so that its largest-magnitude entry is positive
    (first such entry on exact ties)."""
    components = components.copy()
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def pca_fit(X, d):
    X = _as_matrix(X)
    n, D = X.shape
    if n < 2:
        raise NumericsError(f"PCA needs at least 2 rows, got {n}")
    if not 1 <= d <= min(n - 1, D):
        raise NumericsError(f"d must satisfy 1 <= d <= min(n-1, D) = {min(n - 1, D)}, got {d}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / (n - 1)
    cov = (cov + cov.T) / 2
    evals, evecs = np.linalg.eigh(cov)
    # eigh returns ascending order; stable sort keeps tie order reproducible
    order = np.argsort(-evals, kind="stable")[:d]
    components = fix_signs(evecs[:, order].T)
    variance = np.clip(evals[order], 0.0, None)
    return PcaModel(mean=mean, components=components, explained_variance=variance)


def pca_transform(model, X):
    X = _as_matrix(X)
    if X.shape[1] != model.n_features:
        raise NumericsError(f"expected {model.n_features} columns, got {X.shape[1]}")
    return (X - model.mean) @ model.components.T


def pca_inverse_transform(model, Z):
    Z = _as_matrix(Z, "Z")
    if Z.shape[1] != model.n_components:
        raise NumericsError(f"expected {model.n_components} columns, got {Z.shape[1]}")
    return Z @ model.components + model.mean


# --- k-means ----------------------------------------------------------------

def _sq_dists(X, C):
    d2 = (X * X).sum(axis=1)[:, None] - 2.0 * (X @ C.T) + (C * C).sum(axis=1)[None, :]
    return np.maximum(d2, 0.0)


def _assign(X, C, chunk=8192):
    """Nearest centroid per row with exact tie handling (lowest index wins).

    Distances come from the fast ``|x|^2 - 2x.c + |c|^2`` expansion; rows whose
    runner-up is within rounding distance of the winner are re-scored with
    exact differences.
    """
    n = X.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for start in range(0, n, chunk):
        Xb = X[start:start + chunk]
        d2 = _sq_dists(Xb, C)
        best = d2.min(axis=1)
        scale = (Xb * Xb).sum(axis=1) + (C * C).sum(axis=1).max()
        slack = 1e-9 * scale + 1e-300
        near = d2 <= (best + slack)[:, None]
        lab = np.argmax(near, axis=1)
        ambiguous = np.flatnonzero(near.sum(axis=1) > 1)
        for i in ambiguous:
            cand = np.flatnonzero(near[i])
            exact = ((C[cand] - Xb[i]) ** 2).sum(axis=1)
            lab[i] = cand[np.argmin(exact)]
        labels[start:start + chunk] = lab
        dist[start:start + chunk] = ((Xb - C[lab]) ** 2).sum(axis=1)
    return labels, dist


def _kmeans_pp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[int(rng.integers(n))]
    closest = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.uniform(0.0, total), side="right"))
            idx = min(idx, n - 1)
        centers[j] = X[idx]
        closest = np.minimum(closest, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans_fit(X, k, seed, max_iter=100, tol=1e-6):
    """k-means++ seeding followed by Lloyd iterations.

    Stops when no centroid moves more than ``tol`` or after ``max_iter``
    updates. ``inertia_history`` holds the inertia of every assignment step and
    is non-increasing: an update that would raise it (floating-point noise at
    convergence) is discarded.
    """
    X = _as_matrix(X)
    n = X.shape[0]
    if k < 1:
        raise NumericsError(f"k must be >= 1, got {k}")
    if n < k:
        raise NumericsError(f"need at least k={k} points, got {n}")
    rng = make_rng(seed, "kmeans")
    C = _kmeans_pp(X, k, rng)
    labels, dist = _assign(X, C)
    history = [float(dist.sum())]
    iterations = 0
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        new_C = C.copy()
        filled = counts > 0
        new_C[filled] = sums[filled] / counts[filled][:, None]
        taken = set()
        for j in np.flatnonzero(~filled):
            # re-seed an empty cluster at the point farthest from its centroid
            far = np.argsort(-dist, kind="stable")
            pick = next((int(i) for i in far if int(i) not in taken), int(far[0]))
            taken.add(pick)
            new_C[j] = X[pick]
        new_labels, new_dist = _assign(X, new_C)
        inertia = float(new_dist.sum())
        iterations += 1
        if inertia > history[-1]:
            break
        shift = float(np.sqrt(((new_C - C) ** 2).sum(axis=1)).max())
        C, labels, dist = new_C, new_labels, new_dist
        history.append(inertia)
        if shift < tol:
            break
    return KMeansModel(centroids=C, inertia=history[-1], iterations_run=iterations,
                       inertia_history=history)


def kmeans_assign(model, X):
    X = _as_matrix(X)
    if X.shape[1] != model.centroids.shape[1]:
        raise NumericsError(
            f"expected {model.centroids.shape[1]} columns, got {X.shape[1]}"
        )
    return _assign(X, model.centroids)[0]


def subsample_rows(X, max_rows, seed):
    """Uniform subsample without replacement, order preserved."""
    if max_rows is None or X.shape[0] <= max_rows:
        return X
    idx = np.sort(make_rng(seed, "subsample").choice(X.shape[0], size=max_rows, replace=False))
    return X[idx]


def save_matrix_csv(path, M):
    np.savetxt(path, np.asarray(M, dtype=np.float64), delimiter=",", fmt="%.17g")
