import numpy as np
import pytest

from musim.vq import (
    VQCodebook,
    VQError,
    assign,
    histogram_distance,
    sample_training_frames,
    vq_fit,
    vq_histogram,
)


def test_k_equals_distinct_frames_gives_zero_error(rng):
    frames = rng.standard_normal((6, 5))
    codebook = vq_fit(frames, k=6, seed=0)
    labels = assign(frames, codebook.centroids)
    assert sorted(labels) == list(range(6))
    err = np.linalg.norm(frames - codebook.centroids[labels])
    assert err < 1e-12


def test_kmeans_matches_multi_restart_oracle(rng):
    # four well-separated 2-D clusters
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]])
    data = np.vstack([c + 0.2 * rng.standard_normal((40, 2)) for c in centers])
    fitted = vq_fit(data, k=4, seed=3)

    def lloyd(data, init):
        centroids = init.copy()
        for _ in range(200):
            d2 = ((data[:, None, :] - centroids[None]) ** 2).sum(axis=2)
            labels = d2.argmin(axis=1)
            new = np.stack(
                [data[labels == j].mean(axis=0) if np.any(labels == j) else centroids[j] for j in range(4)]
            )
            if np.max(np.linalg.norm(new - centroids, axis=1)) < 1e-10:
                centroids = new
                break
            centroids = new
        inertia = ((data - centroids[labels]) ** 2).sum()
        return centroids, inertia

    oracle_rng = np.random.default_rng(99)
    best, best_inertia = None, np.inf
    for _ in range(20):
        init = data[oracle_rng.choice(data.shape[0], size=4, replace=False)]
        centroids, inertia = lloyd(data, init)
        if inertia < best_inertia:
            best, best_inertia = centroids, inertia

    fitted_sorted = np.array(sorted(fitted.centroids.tolist()))
    oracle_sorted = np.array(sorted(best.tolist()))
    assert np.max(np.abs(fitted_sorted - oracle_sorted)) < 1e-3


def test_fit_seed_deterministic(rng):
    data = rng.standard_normal((300, 8))
    c1 = vq_fit(data, k=16, seed=7)
    c2 = vq_fit(data, k=16, seed=7)
    assert np.array_equal(c1.centroids, c2.centroids)


def test_fit_requires_enough_frames(rng):
    with pytest.raises(VQError, match="at least"):
        vq_fit(rng.standard_normal((3, 4)), k=5, seed=0)


def test_no_empty_clusters(rng):
    # one tight blob plus two distant points: empties appear mid-fit and
    # must be reseeded
    data = np.vstack(
        [
            0.001 * rng.standard_normal((48, 3)),
            [[100.0, 100.0, 100.0]],
            [[101.0, 100.0, 100.0]],
        ]
    )
    codebook = vq_fit(data, k=4, seed=1)
    labels = assign(data, codebook.centroids)
    counts = np.bincount(labels, minlength=4)
    assert np.all(counts > 0)


def test_histogram_sums_to_one(rng):
    codebook = vq_fit(rng.standard_normal((64, 6)), k=8, seed=2)
    hist = vq_histogram(rng.standard_normal((500, 6)), codebook)
    assert abs(hist.sum() - 1.0) < 1e-9


def test_single_frame_one_hot(rng):
    codebook = vq_fit(rng.standard_normal((32, 4)), k=4, seed=5)
    hist = vq_histogram(rng.standard_normal((1, 4)), codebook)
    assert sorted(hist.tolist()) == [0.0, 0.0, 0.0, 1.0]


def test_histogram_matches_brute_force(rng):
    codebook = vq_fit(rng.standard_normal((40, 3)), k=5, seed=8)
    frames = rng.standard_normal((20, 3))
    hist = vq_histogram(frames, codebook)
    expected = np.zeros(5)
    for frame in frames:
        best = min(range(5), key=lambda j: np.sum((frame - codebook.centroids[j]) ** 2))
        expected[best] += 1
    expected /= 20
    assert np.allclose(hist, expected)


def test_empty_frames_error(rng):
    codebook = vq_fit(rng.standard_normal((16, 3)), k=2, seed=0)
    with pytest.raises(VQError, match="non-empty"):
        vq_histogram(np.zeros((0, 3)), codebook)


def test_permuting_codebook_preserves_distances(rng):
    codebook = vq_fit(rng.standard_normal((60, 4)), k=6, seed=4)
    tracks = [rng.standard_normal((30, 4)) for _ in range(4)]
    hists = [vq_histogram(t, codebook) for t in tracks]
    perm = np.random.default_rng(0).permutation(6)
    permuted = VQCodebook(codebook.centroids[perm], codebook.training_frames, codebook.seed)
    hists_p = [vq_histogram(t, permuted) for t in tracks]
    for i in range(4):
        for j in range(4):
            before = histogram_distance(hists[i], hists[j])
            after = histogram_distance(hists_p[i], hists_p[j])
            assert before == pytest.approx(after, abs=1e-12)


def test_frame_sampling_uses_all_when_small(small_store, small_corpus):
    ids = [t.track_id for t in small_corpus.split_tracks("train")][:2]
    frames = sample_training_frames(small_store, ids, total=10_000_000, seed=0)
    expected = sum(small_store.mfcc(t).shape[0] for t in ids)
    assert frames.shape == (expected, 39)


def test_frame_sampling_subsamples(small_store, small_corpus):
    ids = [t.track_id for t in small_corpus.split_tracks("train")][:2]
    frames = sample_training_frames(small_store, ids, total=100, seed=0)
    assert frames.shape == (100, 39)
