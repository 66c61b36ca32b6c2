"""Feature cache and in-memory training sets built from DESED-style manifests."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .datagen import CLASS_NAMES, SPLIT_DOMAIN, SPLIT_KIND, SPLITS, read_manifest
from .events import EventLabel, rasterize
from .features import LOG_FLOOR, N_FRAMES, N_MELS, NormStats, clip_features, normalize

log = logging.getLogger(__name__)

TRAIN_SPLITS = ("strong_synthetic", "weak_real", "unlabeled_real")
STATS_FILE = "stats.json"


def dataset_index(data_dir) -> dict:
    """Read ``dataset.json``, or infer it from ``metadata/*.tsv`` for user-supplied DESED-format data."""
    data_dir = Path(data_dir)
    idx_path = data_dir / "dataset.json"
    if idx_path.exists():
        return json.loads(idx_path.read_text())
    splits = {}
    for split in SPLITS:
        manifest = data_dir / "metadata" / f"{split}.tsv"
        if manifest.exists():
            splits[split] = {
                "manifest": f"metadata/{split}.tsv",
                "audio_dir": f"audio/{split}",
                "kind": SPLIT_KIND[split],
                "domain": SPLIT_DOMAIN[split],
            }
    if not splits:
        raise FileNotFoundError(f"no dataset.json or metadata/*.tsv under {data_dir}")
    return {"classes": list(CLASS_NAMES), "splits": splits}


def extract_features(data_dir, cache_dir, splits=SPLITS) -> dict:
    """Compute raw log-mel stacks per split plus normalization stats over the training splits."""
    data_dir, cache_dir = Path(data_dir), Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    index = dataset_index(data_dir)
    written = {}
    for split in splits:
        if split not in index["splits"]:
            continue
        info = index["splits"][split]
        names = list(read_manifest(data_dir / info["manifest"], info["kind"]))
        feats = np.lib.format.open_memmap(
            cache_dir / f"{split}.npy", mode="w+", dtype=np.float32, shape=(len(names), N_FRAMES, N_MELS)
        )
        for i, name in enumerate(names):
            feats[i] = clip_features(data_dir / info["audio_dir"] / name)
        feats.flush()
        del feats
        (cache_dir / f"{split}.json").write_text(json.dumps({"split": split, "files": names}, indent=0))
        written[split] = len(names)
    present = [s for s in TRAIN_SPLITS if (cache_dir / f"{s}.npy").exists()]
    if present:
        stacks = [np.load(cache_dir / f"{s}.npy", mmap_mode="r") for s in present]
        stats = _running_stats(stacks)
        stats.save(cache_dir / STATS_FILE)
    return written


def _running_stats(stacks) -> NormStats:
    total = np.zeros(N_MELS)
    total_sq = np.zeros(N_MELS)
    count = 0
    for stack in stacks:
        for spec in stack:
            s = np.asarray(spec, dtype=np.float64)
            total += s.sum(axis=0)
            total_sq += (s * s).sum(axis=0)
            count += s.shape[0]
    mean = total / count
    std = np.sqrt(np.maximum(total_sq / count - mean**2, 0.0))
    return NormStats(mean, np.maximum(std, 1e-6))


def read_pseudo_labels(path) -> dict[str, set[int]]:
    return read_manifest(path, "weak")


@dataclass
class ClipSet:
    """Normalized features and label tensors for a group of clips."""

    names: list[str]
    x: torch.Tensor  # [N, T, F] normalized
    strong: torch.Tensor  # [N, T_out, C]
    weak: torch.Tensor  # [N, C]
    has_strong: torch.Tensor  # [N] bool
    has_weak: torch.Tensor  # [N] bool
    domain: torch.Tensor  # [N] float, 1 = real
    source: torch.Tensor  # [N] long, index into TRAIN_SPLITS (or -1)
    events: list  # per clip: list[EventLabel] or None

    def __len__(self):
        return len(self.names)

    def subset(self, idx) -> "ClipSet":
        idx = np.asarray(idx, dtype=np.int64)
        t = torch.from_numpy(idx)
        return ClipSet(
            [self.names[i] for i in idx],
            self.x[t],
            self.strong[t],
            self.weak[t],
            self.has_strong[t],
            self.has_weak[t],
            self.domain[t],
            self.source[t],
            [self.events[i] for i in idx],
        )

    @staticmethod
    def concat(sets) -> "ClipSet":
        return ClipSet(
            [n for s in sets for n in s.names],
            torch.cat([s.x for s in sets]),
            torch.cat([s.strong for s in sets]),
            torch.cat([s.weak for s in sets]),
            torch.cat([s.has_strong for s in sets]),
            torch.cat([s.has_weak for s in sets]),
            torch.cat([s.domain for s in sets]),
            torch.cat([s.source for s in sets]),
            [e for s in sets for e in s.events],
        )


def load_split(data_dir, cache_dir, split: str, n_out_frames: int, stats: NormStats | None = None,
               pseudo: dict | None = None, limit: int | None = None, n_classes: int = len(CLASS_NAMES)) -> ClipSet:
    data_dir, cache_dir = Path(data_dir), Path(cache_dir)
    index = dataset_index(data_dir)
    info = index["splits"][split]
    labels = read_manifest(data_dir / info["manifest"], info["kind"])
    names = json.loads((cache_dir / f"{split}.json").read_text())["files"]
    raw = np.load(cache_dir / f"{split}.npy", mmap_mode="r")
    if limit is not None:
        names = names[:limit]
        raw = raw[:limit]
    stats = stats or NormStats.load(cache_dir / STATS_FILE)
    x = torch.from_numpy(np.ascontiguousarray(normalize(np.asarray(raw), stats), dtype=np.float32))
    n = len(names)
    strong = np.zeros((n, n_out_frames, n_classes), dtype=np.float32)
    weak = np.zeros((n, n_classes), dtype=np.float32)
    has_strong = np.zeros(n, dtype=bool)
    has_weak = np.zeros(n, dtype=bool)
    events = [None] * n
    for i, name in enumerate(names):
        lab = labels.get(name)
        if info["kind"] == "strong":
            events[i] = list(lab or [])
            strong[i] = rasterize(events[i], n_out_frames, n_classes)
            weak[i] = strong[i].max(axis=0)
            has_strong[i] = True
        elif info["kind"] == "weak":
            weak[i, sorted(lab)] = 1.0
            has_weak[i] = True
        elif pseudo is not None and pseudo.get(name):
            weak[i, sorted(pseudo[name])] = 1.0
            has_weak[i] = True
    domain = np.full(n, 1.0 if info["domain"] == "real" else 0.0, dtype=np.float32)
    source = np.full(n, TRAIN_SPLITS.index(split) if split in TRAIN_SPLITS else -1, dtype=np.int64)
    return ClipSet(
        list(names), x, torch.from_numpy(strong), torch.from_numpy(weak), torch.from_numpy(has_strong),
        torch.from_numpy(has_weak), torch.from_numpy(domain), torch.from_numpy(source), events,
    )


def normalized_floor(stats: NormStats) -> torch.Tensor:
    """Per-bin value the log-floor takes after normalization (fill for frequency shifts)."""
    return torch.from_numpy(((LOG_FLOOR - stats.mean) / stats.std).astype(np.float32))
