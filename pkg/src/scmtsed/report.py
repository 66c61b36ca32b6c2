"""Domain-gap reports: per-clip embeddings, t-SNE coordinates and silhouette scores."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .analysis import silhouette, tsne
from .data import ClipSet
from .train import evaluate_f1, predict


@dataclass
class GapReport:
    projection_silhouette: float
    raw_silhouette: float
    coords: np.ndarray
    domains: list[str]
    clip_ids: list[str]
    meta: dict = field(default_factory=dict)

    def record(self) -> dict:
        return {
            **self.meta,
            "silhouette_projection": self.projection_silhouette,
            "silhouette_raw": self.raw_silhouette,
            "n_clips": len(self.clip_ids),
        }

    def save(self, out_dir, name: str = "report"):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{name}.json").write_text(json.dumps(self.record(), indent=1, sort_keys=True) + "\n")
        lines = ["clip_id\tdomain\tx\ty"]
        lines += [f"{c}\t{d}\t{x!r}\t{y!r}" for c, d, (x, y) in zip(self.clip_ids, self.domains, self.coords)]
        (out_dir / f"{name}_coords.tsv").write_text("\n".join(lines) + "\n")


def clip_embeddings(model, x: torch.Tensor) -> np.ndarray:
    _, _, emb = predict(model, x)
    return emb.mean(axis=1).astype(np.float64)


def domain_gap_report(model, clips: ClipSet, perplexity: float = 30.0, seed: int = 0,
                      meta: dict | None = None) -> GapReport:
    """Silhouette over domain tags, on the 2-D t-SNE map and on the raw clip embeddings."""
    domains = ["real" if d > 0.5 else "synthetic" for d in clips.domain.tolist()]
    if len(set(domains)) < 2:
        raise ValueError("domain-gap analysis needs clips from both domains")
    emb = clip_embeddings(model, clips.x)
    coords = tsne(emb, perplexity=perplexity, seed=seed)
    return GapReport(
        projection_silhouette=silhouette(coords, domains).score,
        raw_silhouette=silhouette(emb, domains).score,
        coords=coords,
        domains=domains,
        clip_ids=list(clips.names),
        meta={"seed": seed, "perplexity": perplexity, **(meta or {})},
    )


def analysis_clips(synthetic: ClipSet, real: ClipSet, per_domain: int = 80) -> ClipSet:
    return ClipSet.concat([
        synthetic.subset(np.arange(min(per_domain, len(synthetic)))),
        real.subset(np.arange(min(per_domain, len(real)))),
    ])
