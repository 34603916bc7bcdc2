"""MFCC vector-quantization baseline.

A codebook of K centroids is fit with Lloyd's K-means (k-means++ seeding,
seed-deterministic) on a random sample of MFCC frames. Each track becomes
the normalized histogram of its frames' nearest-centroid assignments, and
track distance is the Euclidean distance between histograms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .features import FeatureStore


class VQError(ValueError):
    pass


@dataclass(frozen=True)
class VQCodebook:
    centroids: np.ndarray  # (K, n_features)
    training_frames: int
    seed: int

    def __post_init__(self) -> None:
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise VQError("centroids must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(c)):
            raise VQError("centroids must be finite")
        object.__setattr__(self, "centroids", c)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _kmeans_pp_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centroids = np.empty((k, data.shape[1]))
    centroids[0] = data[int(rng.integers(0, n))]
    d2 = np.sum((data - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i] = data[int(rng.integers(0, n))]
        else:
            centroids[i] = data[int(rng.choice(n, p=d2 / total))]
        d2 = np.minimum(d2, np.sum((data - centroids[i]) ** 2, axis=1))
    return centroids


def assign(frames: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid index per frame (ties go to the lowest index)."""
    return np.argmin(cdist(frames, centroids, metric="sqeuclidean"), axis=1)


def vq_fit(
    frames: np.ndarray, k: int, seed: int, tol: float = 1e-4, max_iter: int = 300
) -> VQCodebook:
    """Lloyd's K-means to convergence (max centroid shift < tol).

    Clusters that come up empty are reseeded with the points currently
    farthest from their assigned centroid, so no centroid is ever empty
    after the fit.
    """
    data = np.asarray(frames, dtype=np.float64)
    if data.ndim != 2:
        raise VQError("frames must be a 2-D matrix")
    if data.shape[0] < k:
        raise VQError(f"need at least k={k} frames, got {data.shape[0]}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(data, k, rng)
    for _ in range(max_iter):
        dist2 = cdist(data, centroids, metric="sqeuclidean")
        labels = np.argmin(dist2, axis=1)
        nearest = dist2[np.arange(data.shape[0]), labels]
        new_centroids = centroids.copy()
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j] > 0:
                new_centroids[j] = data[labels == j].mean(axis=0)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            # Reseed deterministically with the worst-quantized points.
            order = np.argsort(-nearest, kind="stable")
            for rank, j in enumerate(empties):
                new_centroids[j] = data[order[rank % data.shape[0]]]
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < tol:
            break
    return VQCodebook(centroids=centroids, training_frames=data.shape[0], seed=seed)


def vq_histogram(frames: np.ndarray, codebook: VQCodebook) -> np.ndarray:
    """Normalized histogram of nearest-centroid assignments (sums to 1)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise VQError("need a non-empty 2-D frame matrix")
    labels = assign(frames, codebook.centroids)
    counts = np.bincount(labels, minlength=codebook.k).astype(np.float64)
    return counts / counts.sum()


def histogram_distance(h1: np.ndarray, h2: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(h1, dtype=np.float64) - np.asarray(h2, dtype=np.float64)))


def sample_training_frames(
    store: FeatureStore, track_ids, total: int, seed: int
) -> np.ndarray:
    """Uniform random frame sample across tracks (without replacement when
    the corpus has enough frames)."""
    rng = np.random.default_rng(seed)
    per_track = [store.mfcc(tid) for tid in track_ids]
    stacked = np.vstack(per_track)
    if stacked.shape[0] <= total:
        return stacked
    idx = rng.choice(stacked.shape[0], size=total, replace=False)
    return stacked[np.sort(idx)]


def track_histograms(store: FeatureStore, track_ids, codebook: VQCodebook) -> dict[str, np.ndarray]:
    return {tid: vq_histogram(store.mfcc(tid), codebook) for tid in track_ids}
