"""Clip-level tagger and weak pseudo-labels for the unlabeled real split."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import torch

from .data import ClipSet
from .datagen import CLASS_NAMES
from .model import SEDModel, build_model, preset, save_checkpoint
from .ssl import bce
from .train import predict, set_determinism

log = logging.getLogger(__name__)

PSEUDO_PROVENANCE = "pseudo"


def train_tagger(clips: ClipSet, steps: int = 500, batch_size: int = 16, lr: float = 1e-3, seed: int = 0,
                 model_preset: str = "tiny") -> SEDModel:
    """Fit a clip-level classifier on weak targets (strong clips contribute their derived weak vector)."""
    labeled = (clips.has_weak | clips.has_strong).nonzero().flatten().numpy()
    if len(labeled) == 0:
        raise ValueError("tagger needs at least one labeled clip")
    set_determinism()
    torch.manual_seed(seed)
    rng = np.random.default_rng([seed, 17])
    model = build_model(preset(model_preset), seed=seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    model.train()
    for step in range(steps):
        idx = torch.from_numpy(rng.choice(labeled, size=min(batch_size, len(labeled)), replace=False))
        loss = bce(model(clips.x[idx]).clip_probs, clips.weak[idx])
        if not torch.isfinite(loss):
            raise FloatingPointError(f"tagger loss is non-finite at step {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if (step + 1) % 100 == 0:
            log.info("tagger step %d loss %.4f", step + 1, loss.item())
    return model


def pseudo_label(tagger, clips: ClipSet, threshold: float = 0.5) -> dict[str, set[int]]:
    """Classes with tagger probability >= threshold, per clip; clips with no class are left out.

    ``tagger`` is a SEDModel or any callable mapping a ClipSet to clip
    probabilities of shape [N, C].
    """
    if isinstance(tagger, SEDModel):
        probs, _, _ = predict(tagger, clips.x)
    else:
        probs = np.asarray(tagger(clips))
    if probs.shape[0] != len(clips):
        raise ValueError(f"tagger returned {probs.shape[0]} rows for {len(clips)} clips")
    out = {}
    for name, row in zip(clips.names, probs):
        classes = {int(c) for c in np.flatnonzero(row >= threshold)}
        if classes:
            out[name] = classes
    return out


def write_pseudo_manifest(path, labels: dict[str, set[int]], class_names=CLASS_NAMES):
    lines = ["filename\tevent_labels\tprovenance"]
    for name in sorted(labels):
        tags = ",".join(sorted(class_names[c] for c in labels[name]))
        lines.append(f"{name}\t{tags}\t{PSEUDO_PROVENANCE}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def save_tagger(path, model: SEDModel, meta: dict):
    save_checkpoint(path, model, step=meta.get("steps", 0), extra={"role": "tagger", **meta})
    Path(path).with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
