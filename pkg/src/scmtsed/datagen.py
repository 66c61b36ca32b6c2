"""Desk-scale soundscape corpus with exact strong labels and an injected domain gap.

Ten parametric event classes are rendered over pink-noise backgrounds.
"Synthetic" clips are the clean renders; "real" clips additionally go
through a recording chain (short reverb, EQ tilt, sensor noise).
"""

from __future__ import annotations

import json
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import chirp, fftconvolve, sosfilt, butter

from .events import EventLabel
from .features import CLIP_SAMPLES, CLIP_SECONDS, SAMPLE_RATE, AudioClip, write_wav

PEAK = 0.95
FADE_SECONDS = 0.01


@dataclass(frozen=True)
class EventTemplate:
    class_id: int
    name: str
    kind: str  # tone | chirp | noise | am | harmonic
    duration_range: tuple[float, float]
    freq_range: tuple[float, float]
    amplitude_range: tuple[float, float] = (0.3, 0.8)
    # chirp: end-frequency range; am: modulation-rate range; harmonic: number of partials
    extra: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        lo, hi = self.duration_range
        if not (0.1 < lo <= hi < CLIP_SECONDS):
            raise ValueError(f"{self.name}: duration range must lie within (0.1, 10) s")


TEMPLATES = (
    EventTemplate(0, "alarm", "tone", (0.6, 2.0), (2200.0, 2800.0)),
    EventTemplate(1, "hum", "tone", (1.5, 4.0), (250.0, 350.0)),
    EventTemplate(2, "rising_chirp", "chirp", (0.6, 1.5), (500.0, 900.0), extra=(2500.0, 3500.0)),
    EventTemplate(3, "falling_chirp", "chirp", (0.6, 1.5), (4500.0, 5500.0), extra=(1200.0, 1800.0)),
    EventTemplate(4, "hiss", "noise", (0.8, 3.0), (4000.0, 7000.0)),
    EventTemplate(5, "rumble", "noise", (1.0, 3.0), (300.0, 900.0)),
    EventTemplate(6, "warble", "am", (0.8, 2.5), (1100.0, 1500.0), extra=(4.0, 8.0)),
    EventTemplate(7, "buzz", "am", (0.6, 2.0), (3200.0, 3800.0), extra=(15.0, 25.0)),
    EventTemplate(8, "drone", "harmonic", (1.0, 4.0), (150.0, 220.0), extra=(6.0, 6.0)),
    EventTemplate(9, "chime", "harmonic", (0.6, 2.0), (550.0, 700.0), extra=(4.0, 4.0)),
)
CLASS_NAMES = tuple(t.name for t in TEMPLATES)


def _fade(x: np.ndarray, sr: int) -> np.ndarray:
    n = min(int(FADE_SECONDS * sr), len(x) // 2)
    if n > 0:
        ramp = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, n))
        x[:n] *= ramp
        x[-n:] *= ramp[::-1]
    return x


def synth_event(template: EventTemplate, rng: np.random.Generator, sr: int = SAMPLE_RATE):
    """Return ``(waveform, duration_seconds)`` for one event drawn from ``template``."""
    duration = float(rng.uniform(*template.duration_range))
    n = int(round(duration * sr))
    duration = n / sr
    t = np.arange(n) / sr
    f0 = float(rng.uniform(*template.freq_range))
    amp = float(rng.uniform(*template.amplitude_range))
    kind = template.kind
    if kind == "tone":
        x = np.sin(2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi))
    elif kind == "chirp":
        f1 = float(rng.uniform(*template.extra))
        x = chirp(t, f0=f0, t1=max(duration, 1.0 / sr), f1=f1, method="logarithmic")
    elif kind == "noise":
        lo, hi = template.freq_range
        sos = butter(4, [lo, min(hi, sr / 2 - 1)], btype="bandpass", fs=sr, output="sos")
        x = sosfilt(sos, rng.normal(size=n))
    elif kind == "am":
        rate = float(rng.uniform(*template.extra))
        x = (0.6 + 0.4 * np.sin(2 * np.pi * rate * t)) * np.sin(2 * np.pi * f0 * t)
    elif kind == "harmonic":
        n_partials = int(template.extra[0])
        x = sum(np.sin(2 * np.pi * k * f0 * t) / k for k in range(1, n_partials + 1))
    else:
        raise ValueError(f"unknown synthesis kind {kind!r}")
    x = _fade(np.asarray(x, dtype=np.float64), sr)
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x * (amp / peak)
    return x, duration


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n)
    return x / (np.std(x) + 1e-12)


@dataclass
class Soundscape:
    clip: AudioClip
    labels: list[EventLabel]
    gain: float  # scale applied by peak normalization


def mix_events(events, rng: np.random.Generator, sr: int = SAMPLE_RATE):
    """Sum of rendered events at their onsets (no background, no normalization)."""
    out = np.zeros(CLIP_SAMPLES)
    labels = []
    for template, onset in events:
        seg, dur = synth_event(template, rng, sr)
        start = int(round(onset * sr))
        if start >= CLIP_SAMPLES:
            continue
        seg = seg[: CLIP_SAMPLES - start]
        out[start : start + len(seg)] += seg
        labels.append(EventLabel(template.class_id, start / sr, (start + len(seg)) / sr))
    return out, labels


def render_soundscape(events, background_level: float, rng: np.random.Generator,
                      sr: int = SAMPLE_RATE, clip_id: str = "") -> Soundscape:
    """Mix ``(template, onset)`` events over pink noise with RMS ``background_level``."""
    if len(events) == 0:
        raise ValueError("a soundscape needs at least one event")
    out, labels = mix_events(events, rng, sr)
    if background_level > 0:
        out = out + background_level * pink_noise(CLIP_SAMPLES, rng)
    peak = np.max(np.abs(out))
    gain = PEAK / peak if peak > PEAK else 1.0
    return Soundscape(AudioClip(out * gain, sr, clip_id), labels, gain)


@dataclass
class DomainShift:
    rt60_range: tuple[float, float] | None = (0.2, 0.5)
    tilt_db: float = 6.0
    snr_db_range: tuple[float, float] | None = (20.0, 30.0)

    @classmethod
    def identity(cls) -> "DomainShift":
        return cls(rt60_range=None, tilt_db=0.0, snr_db_range=None)


def synthetic_rir(rt60: float, rng: np.random.Generator, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Direct path followed by exponentially decaying noise of length ``rt60``."""
    n = int(rt60 * sr)
    t = np.arange(n) / sr
    tail = rng.normal(size=n) * np.exp(-6.9 * t / rt60) * 0.3
    tail[0] = 1.0
    return tail


def domainify(clip: AudioClip, rng: np.random.Generator, shift: DomainShift | None = None,
              rir: np.ndarray | None = None) -> AudioClip:
    """Apply the recording chain that turns a clean render into a "real-domain" clip."""
    shift = shift or DomainShift()
    x = np.asarray(clip.samples, dtype=np.float64)
    n = len(x)
    if rir is None and shift.rt60_range is not None:
        rir = synthetic_rir(float(rng.uniform(*shift.rt60_range)), rng, clip.sample_rate)
    if rir is not None:
        x = fftconvolve(x, rir)[:n]
    if shift.tilt_db > 0:
        tilt = float(rng.uniform(-shift.tilt_db, shift.tilt_db))
        spec = np.fft.rfft(x)
        pos = np.linspace(-1.0, 1.0, len(spec))
        x = np.fft.irfft(spec * 10 ** (tilt * pos / 20.0), n)
    if shift.snr_db_range is not None:
        snr = float(rng.uniform(*shift.snr_db_range))
        power = np.mean(x**2)
        x = x + rng.normal(size=n) * np.sqrt(power / 10 ** (snr / 10.0))
    peak = np.max(np.abs(x))
    if peak > 1.0:
        x = x * (PEAK / peak)
    return AudioClip(x, clip.sample_rate, clip.clip_id)


SPLITS = ("strong_synthetic", "weak_real", "unlabeled_real", "validation")
SPLIT_DOMAIN = {
    "strong_synthetic": "synthetic",
    "weak_real": "real",
    "unlabeled_real": "real",
    "validation": "real",
}
SPLIT_KIND = {
    "strong_synthetic": "strong",
    "weak_real": "weak",
    "unlabeled_real": "unlabeled",
    "validation": "strong",
}


@dataclass
class DatasetConfig:
    counts: dict = field(default_factory=lambda: {
        "strong_synthetic": 200, "weak_real": 200, "unlabeled_real": 400, "validation": 100,
    })
    events_per_clip: tuple[int, int] = (1, 3)
    background_db_range: tuple[float, float] = (-40.0, -30.0)
    shift: DomainShift = field(default_factory=DomainShift)


def _assign_classes(n_clips: int, rng: np.random.Generator, events_range, n_classes: int = 10):
    counts = np.zeros(n_classes, dtype=int)
    plan = []
    for _ in range(n_clips):
        k = int(rng.integers(events_range[0], events_range[1] + 1))
        order = np.lexsort((rng.random(n_classes), counts))
        chosen = sorted(int(c) for c in order[:k])
        counts[chosen] += 1
        plan.append(chosen)
    return plan


def render_clip(split: str, index: int, classes, cfg: DatasetConfig, seed: int):
    """Render clip ``index`` of ``split``; its rng depends only on (seed, split, index)."""
    rng = np.random.default_rng([seed, SPLITS.index(split), index])
    events = []
    for c in classes:
        template = TEMPLATES[c]
        # onset drawn so that even the longest duration fits
        onset = float(rng.uniform(0.0, CLIP_SECONDS - template.duration_range[1]))
        events.append((template, onset))
    level = 10 ** (rng.uniform(*cfg.background_db_range) / 20.0)
    scape = render_soundscape(events, level, rng, clip_id=f"{split}_{index:05d}")
    clip = scape.clip
    if SPLIT_DOMAIN[split] == "real":
        clip = domainify(clip, rng, cfg.shift)
    return clip, scape.labels


BYTES_PER_CLIP = 44 + 2 * CLIP_SAMPLES


def build_dataset(out_dir, cfg: DatasetConfig | None = None, seed: int = 0) -> dict:
    """Write audio and DESED-style manifests under ``out_dir``; return the index."""
    cfg = cfg or DatasetConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    total = sum(cfg.counts.get(s, 0) for s in SPLITS)
    free = shutil.disk_usage(out).free
    if free < total * BYTES_PER_CLIP * 1.1:
        raise OSError(f"need ~{total * BYTES_PER_CLIP / 1e6:.0f} MB in {out}, only {free / 1e6:.0f} MB free")
    (out / "metadata").mkdir(exist_ok=True)
    index = {"seed": seed, "sample_rate": SAMPLE_RATE, "classes": list(CLASS_NAMES), "splits": {}}
    plan_rng = np.random.default_rng([seed, 99])
    for split in SPLITS:
        n = int(cfg.counts.get(split, 0))
        audio_dir = out / "audio" / split
        audio_dir.mkdir(parents=True, exist_ok=True)
        plan = _assign_classes(n, plan_rng, cfg.events_per_clip)
        rows = []
        for i, classes in enumerate(plan):
            clip, labels = render_clip(split, i, classes, cfg, seed)
            name = f"{split}_{i:05d}.wav"
            write_wav(audio_dir / name, clip.samples)
            rows.append((name, labels))
        manifest = out / "metadata" / f"{split}.tsv"
        write_manifest(manifest, rows, SPLIT_KIND[split])
        index["splits"][split] = {
            "manifest": str(manifest.relative_to(out)),
            "audio_dir": str(audio_dir.relative_to(out)),
            "kind": SPLIT_KIND[split],
            "domain": SPLIT_DOMAIN[split],
            "count": n,
        }
    index["config"] = _config_record(cfg)
    (out / "dataset.json").write_text(json.dumps(index, indent=1, sort_keys=True))
    return index


def _config_record(cfg: DatasetConfig) -> dict:
    d = asdict(cfg)
    d["shift"] = asdict(cfg.shift)
    return d


def write_manifest(path, rows, kind: str):
    """``rows`` are ``(filename, [EventLabel, ...])``."""
    lines = []
    if kind == "strong":
        lines.append("filename\tonset\toffset\tevent_label")
        for name, labels in rows:
            for ev in sorted(labels, key=lambda e: (e.onset, e.class_id)):
                lines.append(f"{name}\t{ev.onset:.7f}\t{ev.offset:.7f}\t{CLASS_NAMES[ev.class_id]}")
    elif kind == "weak":
        lines.append("filename\tevent_labels")
        for name, labels in rows:
            tags = sorted({CLASS_NAMES[ev.class_id] for ev in labels})
            lines.append(f"{name}\t{','.join(tags)}")
    elif kind == "unlabeled":
        lines.append("filename")
        lines.extend(name for name, _ in rows)
    else:
        raise ValueError(f"unknown manifest kind {kind!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path, kind: str | None = None, class_names=CLASS_NAMES):
    """Parse a DESED-style TSV into ``{filename: labels}``.

    Strong manifests give lists of EventLabel, weak ones sets of class ids,
    unlabeled ones ``None``. The kind is inferred from the header if omitted.
    """
    lines = Path(path).read_text().splitlines()
    header = lines[0].split("\t")
    if kind is None:
        # a third weak column carries the provenance of pseudo-labels
        kind = {4: "strong", 3: "weak", 2: "weak", 1: "unlabeled"}[len(header)]
    lookup = {name: i for i, name in enumerate(class_names)}
    out: dict = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        cols = line.split("\t")
        name = cols[0]
        if kind == "strong":
            out.setdefault(name, [])
            if len(cols) >= 4 and cols[3]:
                out[name].append(EventLabel(lookup[cols[3]], float(cols[1]), float(cols[2])))
        elif kind == "weak":
            tags = cols[1].split(",") if len(cols) > 1 and cols[1] else []
            out[name] = {lookup[t] for t in tags}
        else:
            out[name] = None
    return out
