import math

import numpy as np
import pytest

from scmtsed.analysis import (
    EmbeddingRecord,
    PerplexityError,
    silhouette,
    silhouette_score,
    tsne,
)


def brute_silhouette(X, labels):
    """Direct transcription of the definition with Python loops."""
    n = len(X)
    labels = list(labels)
    dist = lambda i, j: math.sqrt(sum((X[i][k] - X[j][k]) ** 2 for k in range(len(X[i]))))
    s = []
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            s.append(0.0)
            continue
        a = sum(dist(i, j) for j in own) / len(own)
        b = min(
            sum(dist(i, j) for j in range(n) if labels[j] == c) / labels.count(c)
            for c in set(labels) if c != labels[i]
        )
        m = max(a, b)
        s.append((b - a) / m if m > 0 else 0.0)
    return sum(s) / n, s


def random_instance(rng):
    n = int(rng.integers(5, 201))
    k = int(rng.integers(2, 5))
    d = int(rng.integers(1, 17))
    labels = rng.integers(0, k, size=n)
    labels[:k] = np.arange(k)
    X = rng.normal(size=(n, d)) + labels[:, None] * rng.uniform(0, 3)
    return X, labels


class TestSilhouette:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            X, labels = random_instance(rng)
            res = silhouette(X, labels)
            score, coeffs = brute_silhouette(X.tolist(), labels.tolist())
            assert abs(res.score - score) <= 1e-9
            np.testing.assert_allclose(res.coefficients, coeffs, atol=1e-9, rtol=0)

    def test_duplicated_clusters(self):
        X = np.array([[0.0, 0.0]] * 4 + [[10.0, 0.0]] * 4)
        assert silhouette(X, [0] * 4 + [1] * 4).score == 1.0

    def test_all_identical(self):
        assert silhouette(np.ones((6, 3)), [0, 0, 0, 1, 1, 1]).score == 0.0

    def test_singleton_gets_zero(self):
        X = np.array([[0.0], [0.1], [0.2], [5.0]])
        res = silhouette(X, [0, 0, 0, 1])
        assert res.coefficients[3] == 0.0

    def test_one_cluster_rejected(self):
        with pytest.raises(ValueError):
            silhouette(np.zeros((4, 2)), [0, 0, 0, 0])

    def test_nonfinite_rejected(self):
        X = np.zeros((4, 2))
        X[1, 1] = np.nan
        with pytest.raises(ValueError):
            silhouette(X, [0, 0, 1, 1])

    def test_string_labels(self):
        X = np.array([[0.0], [0.1], [3.0], [3.1]])
        assert silhouette(X, ["synthetic", "synthetic", "real", "real"]).score > 0.9

    def test_permutation_and_isometry(self):
        rng = np.random.default_rng(3)
        X, labels = random_instance(rng)
        base = silhouette(X, labels).score
        perm = rng.permutation(len(X))
        assert silhouette(X[perm], labels[perm]).score == pytest.approx(base, abs=1e-12)
        q, _ = np.linalg.qr(rng.normal(size=(X.shape[1], X.shape[1])))
        assert silhouette(X @ q + 5.0, labels).score == pytest.approx(base, abs=1e-9)

    def test_records_raw_mode(self):
        rng = np.random.default_rng(4)
        recs = [EmbeddingRecord(f"c{i}", rng.normal(size=4) + (3 if i % 2 else 0), "real" if i % 2 else "synthetic")
                for i in range(20)]
        res = silhouette_score(recs, use_projection=False)
        assert -1 <= res.score <= 1
        assert res.score == pytest.approx(
            brute_silhouette([r.vector.tolist() for r in recs], [r.domain for r in recs])[0], abs=1e-9
        )


def blobs(n_per=30, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0] * 5, [10.0] + [0.0] * 4, [0.0, 10.0, 0.0, 0.0, 0.0]])
    X = np.concatenate([c + 0.1 * rng.normal(size=(n_per, 5)) for c in centers])
    return X, np.repeat(np.arange(3), n_per)


class TestTSNE:
    def test_blobs_preserved(self):
        X, labels = blobs()
        Y = tsne(X, perplexity=10, seed=0)
        assert Y.shape == (90, 2)
        assert silhouette(Y, labels).score > 0.8

    def test_duplicates_land_together(self):
        X, _ = blobs(20)
        X = np.concatenate([X, X[:1]])
        Y = tsne(X, perplexity=10, seed=1)
        assert np.linalg.norm(Y[0] - Y[-1]) < 1e-3

    def test_deterministic(self):
        X, _ = blobs(15)
        np.testing.assert_array_equal(tsne(X, perplexity=8, seed=5), tsne(X, perplexity=8, seed=5))

    def test_perplexity_too_large(self):
        X, _ = blobs(5)  # 15 points
        with pytest.raises(PerplexityError, match="perplexity"):
            tsne(X, perplexity=30)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            tsne(np.zeros((4, 3)), perplexity=1)

    def test_kl_reported(self):
        X, _ = blobs(15)
        _, kl = tsne(X, perplexity=8, seed=0, return_kl=True)
        assert np.isfinite(kl) and kl >= 0

    def test_projection_records(self):
        X, labels = blobs(15)
        recs = [EmbeddingRecord(str(i), x, "real" if l else "synthetic") for i, (x, l) in enumerate(zip(X, labels))]
        res = silhouette_score(recs, use_projection=True, perplexity=8, seed=0)
        assert -1 <= res.score <= 1
