"""Embedding-space diagnostics: silhouette over domain tags and exact t-SNE."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels


class EmbeddingRecord(NamedTuple):
    clip_id: str
    vector: np.ndarray
    domain: str  # "synthetic" | "real"


class SilhouetteResult(NamedTuple):
    score: float
    coefficients: np.ndarray


def silhouette(X, labels) -> SilhouetteResult:
    """Mean silhouette coefficient of ``X`` [n, d] under cluster ``labels`` (Euclidean).

    Points in singleton clusters get 0; a 0/0 coefficient is 0.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    _, codes = np.unique(np.asarray(labels), return_inverse=True)
    n_clusters = int(codes.max()) + 1 if len(codes) else 0
    if n_clusters < 2:
        raise ValueError(f"silhouette needs at least 2 clusters, got {n_clusters}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite embedding values")
    coeffs = kernels.silhouette_samples(X, np.ascontiguousarray(codes, dtype=np.int64), n_clusters)
    return SilhouetteResult(float(np.mean(coeffs)), np.asarray(coeffs))


def silhouette_score(records: Sequence[EmbeddingRecord], use_projection: bool = True,
                     perplexity: float = 30.0, seed: int = 0) -> SilhouetteResult:
    X = np.stack([np.asarray(r.vector, dtype=np.float64) for r in records])
    tags = [r.domain for r in records]
    if use_projection:
        X = tsne(X, perplexity=perplexity, seed=seed)
    return silhouette(X, tags)


class PerplexityError(ValueError):
    pass


@dataclass
class TSNEConfig:
    perplexity: float = 30.0
    n_iter: int = 1000
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float | None = None  # None: max(n / exaggeration / 4, 50)
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    min_gain: float = 0.01
    init_scale: float = 1e-4


def joint_affinities(X, perplexity: float) -> np.ndarray:
    """Symmetrized P with per-point bandwidths found by binary search on perplexity."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 5:
        raise PerplexityError(f"t-SNE needs at least 5 points, got {n}")
    max_perp = n / 3.0
    if not 0 < perplexity < max_perp:
        raise PerplexityError(f"perplexity {perplexity} infeasible for {n} points; use a value below {max_perp:.3g}")
    sq = np.sum(X * X, axis=1)
    D2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    np.fill_diagonal(D2, 0.0)
    P, _ = kernels.conditional_affinities(np.ascontiguousarray(D2), float(perplexity))
    P = (P + P.T) / (2.0 * n)
    return np.maximum(P, 1e-12 * (1 - np.eye(n)))


def tsne(X, perplexity: float = 30.0, seed: int = 0, config: TSNEConfig | None = None,
         return_kl: bool = False):
    """Exact O(n^2) t-SNE to two dimensions, deterministic under ``seed``."""
    cfg = config or TSNEConfig(perplexity=perplexity)
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    P = joint_affinities(X, cfg.perplexity)
    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, cfg.init_scale, size=(n, 2))
    lr = cfg.learning_rate or max(n / cfg.exaggeration / 4.0, 50.0)
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl = np.nan
    for it in range(cfg.n_iter):
        early = it < cfg.exaggeration_iters
        grad, kl = kernels.tsne_gradient(P, np.ascontiguousarray(Y), cfg.exaggeration if early else 1.0)
        momentum = cfg.momentum_early if early else cfg.momentum_late
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, cfg.min_gain, out=gains)
        update = momentum * update - lr * gains * grad
        Y = Y + update
        Y -= Y.mean(axis=0)
    return (Y, kl) if return_kl else Y


def project_2d(records: Sequence[EmbeddingRecord], perplexity: float = 30.0, seed: int = 0) -> np.ndarray:
    X = np.stack([np.asarray(r.vector, dtype=np.float64) for r in records])
    return tsne(X, perplexity=perplexity, seed=seed)
