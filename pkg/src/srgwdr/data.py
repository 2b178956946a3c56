"""Synthetic data: isotropic Gaussian blobs with a known separation."""

from __future__ import annotations

import numpy as np


def make_blobs(
    n_samples: int = 300,
    n_features: int = 10,
    n_clusters: int = 3,
    separation: float = 10.0,
    sigma: float = 1.0,
    seed: int = 0,
):
    """Blobs whose centers are pairwise ``separation * sigma`` apart.

    Centers lie on a random orthonormal frame (needs
    ``n_clusters <= n_features``); cluster sizes differ by at most one and
    rows are shuffled.

    Returns
    -------
    X : (n_samples, n_features) array
    labels : (n_samples,) int array
    """
    if n_clusters > n_features:
        raise ValueError("n_clusters must not exceed n_features")
    if n_samples < n_clusters:
        raise ValueError("need at least one sample per cluster")
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n_features, n_features)))
    centers = Q[:, :n_clusters].T * (separation * sigma / np.sqrt(2.0))
    labels = np.arange(n_samples) % n_clusters
    labels = labels[rng.permutation(n_samples)]
    X = centers[labels] + sigma * rng.standard_normal((n_samples, n_features))
    return X, labels
