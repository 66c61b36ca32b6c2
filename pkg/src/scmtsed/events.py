"""Event decoding from frame probabilities and event-based F1 scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.ndimage import median_filter
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .features import CLIP_SECONDS

DEFAULT_THRESHOLD = 0.5
DEFAULT_MEDIAN_WINDOW = 7
ONSET_COLLAR = 0.2
OFFSET_COLLAR_FRAC = 0.2


class EventLabel(NamedTuple):
    class_id: int
    onset: float
    offset: float


def frame_period(n_frames: int, clip_seconds: float = CLIP_SECONDS) -> float:
    return clip_seconds / n_frames


def rasterize(events: Iterable[EventLabel], n_frames: int, n_classes: int = 10,
              clip_seconds: float = CLIP_SECONDS) -> np.ndarray:
    """0/1 matrix [n_frames, n_classes] with each event's span rounded to frame boundaries."""
    period = frame_period(n_frames, clip_seconds)
    out = np.zeros((n_frames, n_classes), dtype=np.float32)
    for ev in events:
        start = int(np.clip(np.round(ev.onset / period), 0, n_frames - 1))
        end = int(np.clip(np.round(ev.offset / period), start + 1, n_frames))
        out[start:end, ev.class_id] = 1.0
    return out


def decode_events(frame_probs, threshold: float = DEFAULT_THRESHOLD, median_window: int = DEFAULT_MEDIAN_WINDOW,
                  clip_seconds: float = CLIP_SECONDS) -> list[EventLabel]:
    """Binarize, median-filter per class and turn runs of active frames into events."""
    probs = np.asarray(frame_probs, dtype=np.float64)
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    if median_window < 1 or median_window % 2 == 0:
        raise ValueError("median_window must be a positive odd integer")
    n_frames, n_classes = probs.shape
    period = frame_period(n_frames, clip_seconds)
    active = (probs > threshold).astype(np.uint8)
    if median_window > 1:
        active = median_filter(active, size=(median_window, 1), mode="nearest")
    events = []
    for c in range(n_classes):
        col = np.concatenate([[0], active[:, c], [0]])
        edges = np.flatnonzero(np.diff(col))
        for start, end in zip(edges[::2], edges[1::2]):
            events.append(EventLabel(c, start * period, end * period))
    events.sort(key=lambda e: (e.onset, e.class_id))
    return events


def events_match(pred: EventLabel, ref: EventLabel, onset_collar: float = ONSET_COLLAR,
                 offset_collar_frac: float = OFFSET_COLLAR_FRAC) -> bool:
    if pred.class_id != ref.class_id:
        return False
    offset_collar = max(onset_collar, offset_collar_frac * (ref.offset - ref.onset))
    return abs(pred.onset - ref.onset) <= onset_collar and abs(pred.offset - ref.offset) <= offset_collar


def _count_matches(pred: Sequence[EventLabel], ref: Sequence[EventLabel], onset_collar, offset_collar_frac) -> int:
    if not pred or not ref:
        return 0
    rows, cols = [], []
    for i, p in enumerate(pred):
        for j, r in enumerate(ref):
            if events_match(p, r, onset_collar, offset_collar_frac):
                rows.append(i)
                cols.append(j)
    if not rows:
        return 0
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(pred), len(ref)))
    assignment = maximum_bipartite_matching(graph, perm_type="column")
    return int(np.sum(assignment >= 0))


@dataclass
class ClassScore:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


@dataclass
class F1Result:
    per_class: dict[int, ClassScore] = field(default_factory=dict)

    @property
    def macro_f1(self) -> float:
        scored = [s for s in self.per_class.values() if s.tp + s.fp + s.fn > 0]
        return float(np.mean([s.f1 for s in scored])) if scored else 0.0

    @property
    def micro(self) -> ClassScore:
        return ClassScore(
            sum(s.tp for s in self.per_class.values()),
            sum(s.fp for s in self.per_class.values()),
            sum(s.fn for s in self.per_class.values()),
        )


def event_f1(predicted, reference, onset_collar: float = ONSET_COLLAR,
             offset_collar_frac: float = OFFSET_COLLAR_FRAC, n_classes: int = 10) -> F1Result:
    """Event-based scores with a maximum one-to-one matching per class.

    ``predicted`` and ``reference`` are either flat event lists (one clip) or
    lists of per-clip event lists; matches never cross clip boundaries.
    """
    if onset_collar <= 0:
        raise ValueError("onset_collar must be positive")
    pred_clips, ref_clips = _as_clips(predicted), _as_clips(reference)
    # an empty list stands for "no events" in however many clips the other side has
    if not pred_clips:
        pred_clips = [[] for _ in ref_clips] or [[]]
    if not ref_clips:
        ref_clips = [[] for _ in pred_clips]
    if len(pred_clips) != len(ref_clips):
        raise ValueError("predicted and reference cover different numbers of clips")
    result = F1Result({c: ClassScore(0, 0, 0) for c in range(n_classes)})
    for pred, ref in zip(pred_clips, ref_clips):
        for c in range(n_classes):
            p = [e for e in pred if e.class_id == c]
            r = [e for e in ref if e.class_id == c]
            tp = _count_matches(p, r, onset_collar, offset_collar_frac)
            score = result.per_class[c]
            score.tp += tp
            score.fp += len(p) - tp
            score.fn += len(r) - tp
    return result


def _as_clips(events) -> list[list[EventLabel]]:
    events = list(events)
    if events and isinstance(events[0], EventLabel):
        return [events]
    if events and isinstance(events[0], tuple) and len(events[0]) == 3 and not isinstance(events[0][0], tuple):
        return [[EventLabel(*e) for e in events]]
    return [[EventLabel(*e) for e in clip] for clip in events]
