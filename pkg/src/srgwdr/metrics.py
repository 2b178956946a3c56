"""
Clustering and embedding quality scores.

ARI and homogeneity delegate to scikit-learn; the silhouette is computed here
so that its degenerate-case conventions are explicit.
"""

from __future__ import annotations

import numpy as np
from sklearn.metrics import adjusted_rand_score, homogeneity_score

from .affinity import squared_distance_matrix


def _labels(a, name="labels") -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if a.size and not np.issubdtype(a.dtype, np.integer):
        if not np.all(np.mod(a, 1) == 0):
            raise ValueError(f"{name} must hold integers")
        a = a.astype(np.int64)
    return a


def _same_length(a, b):
    if a.shape != b.shape:
        raise ValueError(f"label vectors differ in length: {a.size} vs {b.size}")


def adjusted_rand_index(a, b) -> float:
    a, b = _labels(a, "a"), _labels(b, "b")
    _same_length(a, b)
    return float(adjusted_rand_score(a, b))


def homogeneity(true, pred) -> float:
    """``1 - H(true | pred) / H(true)`` (natural logs); 1 when ``H(true) = 0``."""
    true, pred = _labels(true, "true"), _labels(pred, "pred")
    _same_length(true, pred)
    # sklearn can overshoot 1 by an ulp
    return float(np.clip(homogeneity_score(true, pred), 0.0, 1.0))


def silhouette(points, labels) -> float:
    """Mean of ``(b - a) / max(a, b)`` with Euclidean distances.

    Samples in singleton clusters and samples with ``a = b = 0`` contribute 0.
    """
    X = np.asarray(points, dtype=np.float64)
    labels = _labels(labels)
    if X.ndim != 2 or X.shape[0] != labels.size:
        raise ValueError("points must be (m, d) with one label per row")
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if classes.size < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    D = np.sqrt(squared_distance_matrix(X))
    onehot = np.zeros((labels.size, classes.size))
    onehot[np.arange(labels.size), inverse] = 1.0
    sums = D @ onehot  # distance sums to each cluster
    own = counts[inverse]
    a = np.where(own > 1, sums[np.arange(labels.size), inverse] / np.maximum(own - 1, 1), 0.0)
    mean_other = sums / counts[None, :]
    mean_other[np.arange(labels.size), inverse] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own == 1] = 0.0
    return float(s.mean())


def prototype_labels(T, true) -> np.ndarray:
    """Plurality true label of each prototype weighted by ``T[:, j]``.

    Ties go to the lowest label; empty prototypes get -1.
    """
    T = np.asarray(T, dtype=np.float64)
    true = _labels(true, "true")
    if T.shape[0] != true.size:
        raise ValueError("T and labels disagree on the number of samples")
    if np.any(true < 0):
        raise ValueError("true labels must be nonnegative")
    votes = np.zeros((T.shape[1], int(true.max()) + 1 if true.size else 0))
    np.add.at(votes.T, true, T)
    out = np.argmax(votes, axis=1)
    out[T.sum(axis=0) < 1e-12] = -1
    return out
