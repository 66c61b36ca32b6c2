"""Audio ingestion and log-mel feature extraction.

All clips are brought to 16 kHz and 10 s, then turned into a 648 x 128
log-mel matrix: Hann window 2048, hop 255, 128 HTK-scale area-normalized
triangular filters over 0-8000 Hz, ``log(max(power, LOG_FLOOR_POWER))``.
A centered STFT of 160,000 samples gives 628 frames; the time axis is
padded symmetrically with the log-floor value up to 648.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

SAMPLE_RATE = 16_000
CLIP_SECONDS = 10.0
CLIP_SAMPLES = int(SAMPLE_RATE * CLIP_SECONDS)
N_FFT = 2048
HOP = 255
N_MELS = 128
N_FRAMES = 648
F_MIN = 0.0
F_MAX = 8000.0
LOG_FLOOR_POWER = 1e-10
LOG_FLOOR = float(np.log(LOG_FLOOR_POWER))


class InvalidInputError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    clip_id: str = ""

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path) -> AudioClip:
    """Read a 16-bit PCM WAV file (mono, or first channel of multichannel)."""
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise InvalidInputError(f"{path}: only 16-bit PCM is supported")
        n_ch = w.getnchannels()
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_ch > 1:
        data = data.reshape(-1, n_ch)[:, 0]
    return AudioClip(data, rate, Path(path).stem)


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE):
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(pcm.tobytes())


def resample(clip: AudioClip, target_rate: int = SAMPLE_RATE) -> AudioClip:
    if clip.sample_rate <= 0 or target_rate <= 0:
        raise InvalidInputError("sample rates must be positive")
    if len(clip.samples) == 0:
        raise InvalidInputError("cannot resample an empty clip")
    if clip.sample_rate == target_rate:
        return AudioClip(np.asarray(clip.samples, dtype=np.float64).copy(), target_rate, clip.clip_id)
    ratio = Fraction(int(target_rate), int(clip.sample_rate))
    out = resample_poly(np.asarray(clip.samples, dtype=np.float64), ratio.numerator, ratio.denominator)
    return AudioClip(out, int(target_rate), clip.clip_id)


def fix_length(samples: np.ndarray, n: int = CLIP_SAMPLES) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) >= n:
        return samples[:n]
    return np.pad(samples, (0, n - len(samples)))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int = N_MELS, f_min: float = F_MIN, f_max: float = F_MAX) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(
    sr: int = SAMPLE_RATE, n_fft: int = N_FFT, n_mels: int = N_MELS, f_min: float = F_MIN, f_max: float = F_MAX
) -> np.ndarray:
    """[n_mels, n_fft // 2 + 1] triangular filters, each scaled to unit area in Hz."""
    fft_freqs = np.linspace(0.0, sr / 2.0, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (fft_freqs[None, :] - lower) / (center - lower)
    falling = (upper - fft_freqs[None, :]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return weights * (2.0 / (upper - lower))


_FILTERBANK = mel_filterbank()
_WINDOW = np.hanning(N_FFT + 1)[:-1]  # periodic Hann


def power_spectrogram(samples: np.ndarray) -> np.ndarray:
    """Centered STFT power, zero-padded at both ends; [n_frames, n_fft // 2 + 1]."""
    padded = np.pad(samples, (N_FFT // 2, N_FFT // 2))
    n_frames = 1 + (len(padded) - N_FFT) // HOP
    frames = np.lib.stride_tricks.sliding_window_view(padded, N_FFT)[::HOP][:n_frames]
    spec = np.fft.rfft(frames * _WINDOW, axis=1)
    return spec.real**2 + spec.imag**2


def log_mel(clip: AudioClip) -> np.ndarray:
    """648 x 128 float32 log-mel matrix of a 16 kHz clip (padded or cropped to 10 s)."""
    if clip.sample_rate != SAMPLE_RATE:
        raise InvalidInputError(f"log_mel expects {SAMPLE_RATE} Hz input, got {clip.sample_rate}")
    samples = fix_length(clip.samples)
    if not np.all(np.isfinite(samples)):
        raise InvalidInputError("clip contains non-finite samples")
    mel = power_spectrogram(samples) @ _FILTERBANK.T
    logmel = np.log(np.maximum(mel, LOG_FLOOR_POWER))
    n = logmel.shape[0]
    if n < N_FRAMES:
        before = (N_FRAMES - n) // 2
        logmel = np.pad(logmel, ((before, N_FRAMES - n - before), (0, 0)), constant_values=LOG_FLOOR)
    elif n > N_FRAMES:
        start = (n - N_FRAMES) // 2
        logmel = logmel[start : start + N_FRAMES]
    return logmel.astype(np.float32)


def clip_features(path) -> np.ndarray:
    """WAV file -> log-mel matrix."""
    return log_mel(resample(read_wav(path), SAMPLE_RATE))


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, specs: np.ndarray, min_std: float = 1e-6) -> "NormStats":
        """Per-mel-bin statistics over every frame of a [N, T, F] (or [T, F]) stack."""
        flat = np.asarray(specs, dtype=np.float64).reshape(-1, np.shape(specs)[-1])
        return cls(flat.mean(axis=0), np.maximum(flat.std(axis=0), min_std))

    @classmethod
    def identity(cls, n_mels: int = N_MELS) -> "NormStats":
        return cls(np.zeros(n_mels), np.ones(n_mels))

    def save(self, path):
        Path(path).write_text(
            json.dumps({"n_mels": len(self.mean), "mean": self.mean.tolist(), "std": self.std.tolist()}, indent=1)
        )

    @classmethod
    def load(cls, path) -> "NormStats":
        d = json.loads(Path(path).read_text())
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def normalize(spec: np.ndarray, stats: NormStats) -> np.ndarray:
    spec = np.asarray(spec)
    if stats.mean.shape != (spec.shape[-1],) or stats.std.shape != (spec.shape[-1],):
        raise InvalidInputError(
            f"stats have {stats.mean.shape[0]} bins, spectrogram has {spec.shape[-1]}"
        )
    if np.any(stats.std <= 0):
        raise InvalidInputError("std entries must be positive")
    out = (spec - stats.mean) / stats.std
    return out.astype(spec.dtype if spec.dtype.kind == "f" else np.float64)


def denormalize(spec: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(spec) * stats.std + stats.mean
