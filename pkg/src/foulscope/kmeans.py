"""Spherical k-means on unit vectors (cosine geometry).

Two seeding strategies share one Lloyd loop:

* :func:`farthest_first_init` - deterministic, used for per-image component
  clustering.
* :func:`kmeans_plusplus_init` - seeded greedy k-means++ with distance
  ``1 - cos`` (half the squared chord length), used for prototype fitting and
  frame summarisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import InvalidK
from .validation import check_count, unit_rows


@dataclass(frozen=True)
class LloydResult:
    labels: np.ndarray
    centroids: np.ndarray
    n_iter: int
    inertia_history: tuple[float, ...]

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def normalized_means(X: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    onehot = (labels[None, :] == np.arange(k)[:, None]).astype(X.dtype)
    sums = onehot @ X
    norms = np.linalg.norm(sums, axis=1)
    degenerate = norms <= 1e-12
    if np.any(degenerate):
        # members cancel exactly (e.g. antipodal pair); fall back to the first member
        for j in np.flatnonzero(degenerate):
            sums[j] = X[np.flatnonzero(labels == j)[0]]
            norms[j] = 1.0
    return sums / norms[:, None]


def inertia_of(X: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    """Sum over points of ``1 - cos(point, assigned centroid)``."""
    cos = np.einsum("ij,ij->i", X, centroids[labels])
    return float(np.sum(1.0 - cos))


def _assign(S: np.ndarray, k: int) -> np.ndarray:
    labels = S.argmax(axis=1)
    counts = np.bincount(labels, minlength=k)
    if np.all(counts > 0):
        return labels
    own = S[np.arange(S.shape[0]), labels]
    for j in np.flatnonzero(counts == 0):
        movable = counts[labels] > 1
        candidates = np.where(movable, own, np.inf)
        p = int(np.argmin(candidates))
        counts[labels[p]] -= 1
        labels[p] = j
        counts[j] = 1
        own[p] = np.inf
    return labels


def lloyd(X: np.ndarray, centroids: np.ndarray, max_iter: int) -> LloydResult:
    """Run Lloyd iterations from ``centroids`` until labels stop changing.

    Assignment is by maximum cosine, ties to the lowest component index. An
    empty component takes the point farthest from its current centroid among
    points whose component would not itself become empty.
    """
    k = centroids.shape[0]
    C = centroids
    S = X @ C.T
    labels = None
    history: list[float] = []
    n_iter = 0
    for it in range(1, max_iter + 1):
        new = _assign(S, k)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        C = normalized_means(X, labels, k)
        S = X @ C.T
        history.append(float(np.sum(1.0 - S[np.arange(X.shape[0]), labels])))
        n_iter = it
    return LloydResult(labels=labels, centroids=C, n_iter=n_iter, inertia_history=tuple(history))


def farthest_first_init(X: np.ndarray, k: int) -> np.ndarray:
    """Indices of ``k`` seeds: start at row 0, then repeatedly take the row with
    the smallest maximum cosine to the seeds chosen so far (lowest index on ties)."""
    chosen = [0]
    maxcos = X @ X[0]
    maxcos[0] = np.inf
    for _ in range(1, k):
        nxt = int(np.argmin(maxcos))
        chosen.append(nxt)
        maxcos = np.maximum(maxcos, X @ X[nxt])
        maxcos[chosen] = np.inf
    return np.asarray(chosen)


def kmeans_plusplus_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    n_trials = 2 + int(math.log(k))
    first = int(rng.integers(n))
    chosen = [first]
    closest = np.clip(1.0 - X @ X[first], 0.0, None)
    closest[first] = 0.0
    for _ in range(1, k):
        pot = float(closest.sum())
        if pot <= 1e-12:
            taken = np.zeros(n, dtype=bool)
            taken[chosen] = True
            nxt = int(np.flatnonzero(~taken)[0])
        else:
            cum = np.cumsum(closest)
            cand = np.searchsorted(cum, rng.random(n_trials) * cum[-1], side="right")
            cand = np.minimum(cand, n - 1)
            dist = np.clip(1.0 - X[cand] @ X.T, 0.0, None)
            trial = np.minimum(closest[None, :], dist)
            nxt = int(cand[int(np.argmin(trial.sum(axis=1)))])
        chosen.append(nxt)
        closest = np.minimum(closest, np.clip(1.0 - X @ X[nxt], 0.0, None))
        closest[chosen] = 0.0
    return np.asarray(chosen)


@dataclass(frozen=True)
class SphericalKMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int


def spherical_kmeans(points, m: int, seed: int = 0, *, max_iter: int = 300,
                     n_init: int = 4) -> SphericalKMeansResult:
    """Cluster unit vectors into ``m`` groups with seeded k-means++ restarts.

    Runs ``n_init`` seeded initialisations from one generator and keeps the
    lowest-inertia result (earliest run on ties). Deterministic for a fixed
    ``seed``.
    """
    X = unit_rows(points, "points")
    n = X.shape[0]
    if isinstance(m, bool) or not isinstance(m, (int, np.integer)) or not 1 <= m <= n:
        raise InvalidK(f"cluster count {m!r} must lie in [1, {n}]")
    check_count(max_iter, "max_iter")
    check_count(n_init, "n_init")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        seeds = kmeans_plusplus_init(X, int(m), rng)
        res = lloyd(X, X[seeds].copy(), max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    centroids = best.centroids
    centroids.setflags(write=False)
    return SphericalKMeansResult(centroids=centroids, labels=best.labels,
                                 inertia=best.inertia, n_iter=best.n_iter)


class SphericalKMeans(ClusterMixin, TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`spherical_kmeans`.

    Parameters
    ----------
    n_clusters : int, default=8
    n_init : int, default=4
        Number of seeded k-means++ restarts; the lowest inertia wins.
    max_iter : int, default=300
    random_state : int, default=0

    Attributes
    ----------
    cluster_centers_ : ndarray of shape (n_clusters, n_features)
        Unit-norm centroids.
    labels_ : ndarray of shape (n_samples,)
    inertia_ : float
        Sum of ``1 - cos`` between each sample and its centroid.
    n_iter_ : int
    """

    def __init__(self, n_clusters=8, n_init=4, max_iter=300, random_state=0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        res = spherical_kmeans(X, self.n_clusters, self.random_state,
                               max_iter=self.max_iter, n_init=self.n_init)
        self.cluster_centers_ = res.centroids
        self.labels_ = res.labels
        self.inertia_ = res.inertia
        self.n_iter_ = res.n_iter
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Cosine similarity of each sample to each centroid."""
        check_is_fitted(self, "cluster_centers_")
        X = unit_rows(check_array(X, dtype=np.float64))
        return X @ self.cluster_centers_.T

    def predict(self, X):
        return self.transform(X).argmax(axis=1)
