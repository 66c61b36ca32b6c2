"""Spectrogram transforms used by the consistency losses.

Functions accept numpy arrays or torch tensors shaped ``[..., T, F]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .features import CLIP_SECONDS, LOG_FLOOR, N_FRAMES

MAX_SHIFT_SECONDS = 2.0
MAX_SHIFT_BINS = 4
FRAMES_PER_SECOND = N_FRAMES / CLIP_SECONDS


@dataclass(frozen=True)
class ShiftSpec:
    tau: int  # time shift, input frames
    nu: int  # frequency shift, mel bins


def _truncated_normal(rng: np.random.Generator, bound: float) -> float:
    # bound is 2 sigma; rejection keeps the shape of the normal inside the bound
    sigma = bound / 2.0
    while True:
        v = rng.normal(0.0, sigma)
        if -bound <= v <= bound:
            return v


def sample_shift(
    rng: np.random.Generator,
    max_seconds: float = MAX_SHIFT_SECONDS,
    max_bins: int = MAX_SHIFT_BINS,
    quantum: int = 1,
) -> ShiftSpec:
    """Draw a (time, frequency) shift from truncated normals with 2 sigma at the bound.

    ``quantum`` rounds tau to a multiple of that many frames (e.g. the model's
    time stride, so label shifts stay exact).
    """
    max_tau = max_seconds * FRAMES_PER_SECOND
    tau = _truncated_normal(rng, max_tau)
    tau = int(np.round(tau / quantum)) * quantum
    lim = int(np.floor(max_tau / quantum)) * quantum
    tau = int(np.clip(tau, -lim, lim))
    nu = int(np.clip(np.round(_truncated_normal(rng, max_bins)), -max_bins, max_bins))
    return ShiftSpec(tau, nu)


def time_shift(x, tau: int, axis: int = -2):
    """Circular shift along time."""
    if isinstance(x, torch.Tensor):
        return torch.roll(x, shifts=int(tau), dims=axis)
    return np.roll(x, int(tau), axis=axis)


def output_shift(tau: int, n_in: int, n_out: int) -> int:
    """Input-frame shift expressed in output frames, rounded to the nearest."""
    return int(np.round(tau * n_out / n_in))


def shift_labels(labels, tau: int, n_in_frames: int = N_FRAMES):
    """Shift a ``[..., T_out, C]`` frame label matrix by an input-frame shift ``tau``."""
    n_out = labels.shape[-2]
    return time_shift(labels, output_shift(tau, n_in_frames, n_out), axis=-2)


def freq_shift(x, nu: int, fill=LOG_FLOOR):
    """Shift along the mel axis by ``nu`` bins; vacated bins take ``fill``.

    ``fill`` is a scalar or a per-bin vector (e.g. the normalized floor).
    """
    nu = int(nu)
    if nu == 0:
        return x.clone() if isinstance(x, torch.Tensor) else np.array(x, copy=True)
    n = x.shape[-1]
    if isinstance(x, torch.Tensor):
        fill_t = torch.as_tensor(fill, dtype=x.dtype).expand(x.shape).clone()
        out = fill_t
    else:
        out = np.broadcast_to(np.asarray(fill, dtype=x.dtype), x.shape).copy()
    if abs(nu) >= n:
        return out
    if nu > 0:
        out[..., nu:] = x[..., : n - nu]
    else:
        out[..., : n + nu] = x[..., -nu:]
    return out


def mix(a, b, lam: float):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    return lam * a + (1.0 - lam) * b


def sample_lambda(rng: np.random.Generator, beta_params=(0.5, 0.5)) -> float:
    return float(rng.beta(*beta_params))


def add_noise(x, sigma: float = 0.5, rng=None):
    """Add i.i.d. N(0, sigma^2) noise; ``rng`` is a numpy Generator or torch Generator."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return x.clone() if isinstance(x, torch.Tensor) else np.array(x, copy=True)
    if isinstance(x, torch.Tensor):
        if isinstance(rng, np.random.Generator):
            noise = torch.from_numpy(rng.normal(0.0, sigma, size=tuple(x.shape))).to(x.dtype)
        else:
            noise = torch.randn(x.shape, generator=rng, dtype=x.dtype) * sigma
        return x + noise
    rng = rng if rng is not None else np.random.default_rng()
    return x + rng.normal(0.0, sigma, size=np.shape(x)).astype(np.result_type(x, np.float32))
