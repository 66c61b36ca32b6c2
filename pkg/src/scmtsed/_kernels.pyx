# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled O(n^2) kernels for silhouette analysis and exact t-SNE."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log, fabs, INFINITY

cnp.import_array()


def silhouette_samples(const double[:, ::1] X, const long[::1] labels, int n_clusters):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k, c
    cdef double acc, diff, a, b, denom
    cdef double[::1] sums = np.zeros(n_clusters)
    cdef long[::1] counts = np.zeros(n_clusters, dtype=np.int64)
    cdef double[::1] out = np.zeros(n)
    for i in range(n):
        counts[labels[i]] += 1
    for i in range(n):
        for c in range(n_clusters):
            sums[c] = 0.0
        for j in range(n):
            if j == i:
                continue
            acc = 0.0
            for k in range(d):
                diff = X[i, k] - X[j, k]
                acc += diff * diff
            sums[labels[j]] += sqrt(acc)
        c = labels[i]
        if counts[c] < 2:
            out[i] = 0.0
            continue
        a = sums[c] / (counts[c] - 1)
        b = INFINITY
        for k in range(n_clusters):
            if k != c and counts[k] > 0 and sums[k] / counts[k] < b:
                b = sums[k] / counts[k]
        denom = a if a > b else b
        out[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return np.asarray(out)


def conditional_affinities(const double[:, ::1] D2, double perplexity, double tol=1e-5, int max_iter=200):
    """Row-stochastic P(j|i) with per-row Gaussian precision matched to ``perplexity``."""
    cdef Py_ssize_t n = D2.shape[0]
    cdef Py_ssize_t i, j, it
    cdef double target = log(perplexity)
    cdef double beta, lo, hi, sum_p, h, w
    cdef double[:, ::1] P = np.zeros((n, n))
    cdef double[::1] betas = np.zeros(n)
    for i in range(n):
        beta = 1.0
        lo = -INFINITY
        hi = INFINITY
        for it in range(max_iter):
            sum_p = 0.0
            h = 0.0
            for j in range(n):
                if j == i:
                    P[i, j] = 0.0
                    continue
                w = exp(-D2[i, j] * beta)
                P[i, j] = w
                sum_p += w
            if sum_p <= 0.0:
                sum_p = 1e-300
            for j in range(n):
                h += D2[i, j] * P[i, j]
            # entropy in nats
            h = log(sum_p) + beta * h / sum_p
            if fabs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == INFINITY else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == -INFINITY else (beta + lo) / 2.0
        for j in range(n):
            P[i, j] /= sum_p
        betas[i] = beta
    return np.asarray(P), np.asarray(betas)


def tsne_gradient(const double[:, ::1] P, const double[:, ::1] Y, double exaggeration=1.0):
    """Gradient of KL(P||Q) for Student-t Q, plus the KL value (without exaggeration)."""
    cdef Py_ssize_t n = Y.shape[0], dim = Y.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff, z = 0.0, kl = 0.0, q, mult
    cdef double[:, ::1] W = np.zeros((n, n))
    cdef double[:, ::1] grad = np.zeros((n, dim))
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(dim):
                diff = Y[i, k] - Y[j, k]
                acc += diff * diff
            acc = 1.0 / (1.0 + acc)
            W[i, j] = acc
            W[j, i] = acc
            z += 2.0 * acc
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            q = W[i, j] / z
            if q < 1e-12:
                q = 1e-12
            if P[i, j] > 0.0:
                kl += P[i, j] * log(P[i, j] / q)
            mult = 4.0 * (exaggeration * P[i, j] - W[i, j] / z) * W[i, j]
            for k in range(dim):
                grad[i, k] += mult * (Y[i, k] - Y[j, k])
    return np.asarray(grad), kl
