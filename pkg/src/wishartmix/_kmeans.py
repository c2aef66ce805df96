"""Small deterministic k-means used only for initializing labels."""

from __future__ import annotations

import numpy as np


def kmeans_labels(points, k, rng, n_iter=50):
    """Lloyd's k-means with k-means++ seeding; returns labels in 0..k-1.

    Deterministic given the RngState. Empty clusters are refilled with the
    point farthest from its assigned center, so all k labels stay populated
    whenever n >= k.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    gen = rng.generator
    if k == 1:
        return np.zeros(n, dtype=np.int64)

    centers = np.empty((k, points.shape[1]))
    centers[0] = points[gen.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = points[gen.integers(n)]
        else:
            u = gen.uniform() * total
            centers[j] = points[min(np.searchsorted(np.cumsum(d2), u), n - 1)]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(n_iter):
        dists = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = dists.argmin(axis=1)
        for j in range(k):
            mask = new_labels == j
            if mask.any():
                centers[j] = points[mask].mean(axis=0)
            else:
                far = np.argmax(dists[np.arange(n), new_labels])
                new_labels[far] = j
                centers[j] = points[far]
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return labels.astype(np.int64)
