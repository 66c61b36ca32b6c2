"""Pure numpy versions of the compiled kernels (same signatures and results)."""

import numpy as np


def _pairwise_distances(X):
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def silhouette_samples(X, labels, n_clusters):
    X = np.ascontiguousarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = X.shape[0]
    D = _pairwise_distances(X)
    onehot = np.zeros((n, n_clusters))
    onehot[np.arange(n), labels] = 1.0
    counts = onehot.sum(axis=0)
    sums = D @ onehot  # sum of distances from each point to each cluster
    own = counts[labels]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = sums[np.arange(n), labels] / (own - 1)
        mean_other = sums / counts
    mean_other[np.arange(n), labels] = np.inf
    mean_other[:, counts == 0] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (b - a) / denom
    s[(own < 2) | (denom == 0)] = 0.0
    return s


def conditional_affinities(D2, perplexity, tol=1e-5, max_iter=200):
    D2 = np.asarray(D2, dtype=np.float64)
    n = D2.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        d = D2[i].copy()
        beta, lo, hi = 1.0, -np.inf, np.inf
        for _ in range(max_iter):
            w = np.exp(-d * beta)
            w[i] = 0.0
            sum_p = max(w.sum(), 1e-300)
            h = np.log(sum_p) + beta * np.dot(d, w) / sum_p
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == -np.inf else (beta + lo) / 2.0
        P[i] = w / sum_p
        betas[i] = beta
    return P, betas


def tsne_gradient(P, Y, exaggeration=1.0):
    Y = np.asarray(Y, dtype=np.float64)
    diff = Y[:, None, :] - Y[None, :, :]
    W = 1.0 / (1.0 + np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(W, 0.0)
    z = W.sum()
    Q = W / z
    mult = 4.0 * (exaggeration * P - Q) * W
    grad = np.einsum("ij,ijk->ik", mult, diff)
    q = np.maximum(Q, 1e-12)
    mask = P > 0
    kl = float(np.sum(P[mask] * np.log(P[mask] / q[mask])))
    return grad, kl
