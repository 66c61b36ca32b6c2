"""Semi-supervised objectives: mean teacher, ICT, shift consistency (SCT) and SCMT."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .augment import add_noise, freq_shift, mix, output_shift, shift_labels, time_shift
from .features import LOG_FLOOR, N_FRAMES

log = logging.getLogger(__name__)

BCE_EPS = 1e-7

LOSS_FIELDS = (
    "L_w_bce", "L_s_bce", "Lp_w_mse", "Lp_s_mse",
    "L_ict",
    "L_wf_bce", "L_sf_bce", "L_st_bce", "L_st_mse",
    "Lp_wt_mse", "Lp_wf_mse", "Lp_st_mse", "Lp_sf_mse",
    "L_d",
)


@dataclass
class LossBreakdown:
    """Named loss terms and the weight each contributes to ``total``."""

    terms: dict[str, torch.Tensor] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)

    def add(self, name: str, value: torch.Tensor, weight: float = 1.0):
        if name in self.terms:
            raise KeyError(f"duplicate loss term {name!r}")
        self.terms[name] = value
        self.weights[name] = float(weight)
        return self

    def update(self, other: "LossBreakdown"):
        for name, value in other.terms.items():
            self.add(name, value, other.weights[name])
        return self

    @property
    def total(self) -> torch.Tensor:
        total = None
        for name, value in self.terms.items():
            term = self.weights[name] * value
            total = term if total is None else total + term
        return total if total is not None else torch.zeros(())

    def __getitem__(self, name):
        return self.terms[name]

    def check_finite(self):
        for name, value in self.terms.items():
            if not torch.isfinite(value).all():
                raise FloatingPointError(f"non-finite loss component {name}: {value.item()}")

    def as_floats(self) -> dict[str, float]:
        out = {name: float(self.terms[name].detach()) if name in self.terms else 0.0 for name in LOSS_FIELDS}
        out["total"] = float(self.total.detach())
        return out


def ramp_up(t: float, T: float) -> float:
    """Consistency weight exp(-5 (1 - t/T)^2), reaching 1 at t = T."""
    if T <= 0:
        raise ValueError("ramp-up length must be positive")
    if t < 0:
        raise ValueError("step must be non-negative")
    phase = 1.0 - min(t, T) / T
    return math.exp(-5.0 * phase * phase)


@torch.no_grad()
def ema_update(student, teacher, alpha: float):
    """teacher <- alpha * teacher + (1 - alpha) * student, element-wise.

    Accepts two ``nn.Module``s (float buffers such as batch-norm statistics
    are copied from the student) or two equal-length sequences of arrays.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    if isinstance(student, nn.Module):
        s_params = dict(student.named_parameters())
        for name, t_param in teacher.named_parameters():
            s = s_params[name]
            if s.shape != t_param.shape:
                raise ValueError(f"shape mismatch for {name}: {tuple(s.shape)} vs {tuple(t_param.shape)}")
            # lerp form keeps teacher == student an exact fixed point
            t_param.lerp_(s.detach(), 1.0 - alpha)
        s_bufs = dict(student.named_buffers())
        for name, buf in teacher.named_buffers():
            buf.copy_(s_bufs[name])
        return teacher
    if len(student) != len(teacher):
        raise ValueError("student and teacher have different numbers of arrays")
    out = []
    for s, t in zip(student, teacher):
        if np.shape(s) != np.shape(t):
            raise ValueError(f"shape mismatch: {np.shape(s)} vs {np.shape(t)}")
        out.append(t + (1.0 - alpha) * (np.asarray(s) - t))
    return out


def bce(probs: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean binary cross-entropy over the clips selected by ``mask`` (zero if none)."""
    if mask is not None:
        if not bool(mask.any()):
            return probs.sum() * 0.0
        probs, targets = probs[mask], targets[mask]
    with torch.no_grad():
        if bool((probs < 0).any()) or bool((probs > 1).any()):
            raise ValueError("probabilities outside [0, 1]")
    p = probs.clamp(BCE_EPS, 1.0 - BCE_EPS)
    return -(targets * torch.log(p) + (1.0 - targets) * torch.log(1.0 - p)).mean()


def mse(a: torch.Tensor, b: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    if mask is not None:
        if not bool(mask.any()):
            return a.sum() * 0.0
        a, b = a[mask], b[mask]
    return ((a - b) ** 2).mean()


def mean_teacher_loss(student_out, teacher_out, batch, t: float, T: float) -> LossBreakdown:
    """Supervised BCE on labeled clips plus ramped student-teacher MSE on all clips."""
    r = ramp_up(t, T)
    lb = LossBreakdown()
    lb.add("L_w_bce", bce(student_out.clip_probs, batch.weak, batch.has_weak))
    lb.add("L_s_bce", bce(student_out.frame_probs, batch.strong, batch.has_strong))
    lb.add("Lp_w_mse", mse(student_out.clip_probs, teacher_out.clip_probs.detach()), r)
    lb.add("Lp_s_mse", mse(student_out.frame_probs, teacher_out.frame_probs.detach()), r)
    return lb


def ict_loss(student, teacher, unlabeled: torch.Tensor, lam: float, perm=None, rng=None) -> torch.Tensor:
    """MSE between the student's prediction on a mixed pair and the mix of teacher predictions.

    Each clip ``u_j`` is paired with ``u[perm[j]]``. Only real unlabeled clips
    should be passed in.
    """
    n = unlabeled.shape[0]
    if n < 2:
        log.warning("ICT skipped: need at least 2 unlabeled clips, got %d", n)
        return torch.zeros(())
    if perm is None:
        rng = rng if rng is not None else np.random.default_rng()
        perm = rng.permutation(n)
    perm = torch.as_tensor(np.asarray(perm), dtype=torch.long)
    with torch.no_grad():
        t_out = teacher(unlabeled)
        target_clip = mix(t_out.clip_probs, t_out.clip_probs[perm], lam)
        target_frame = mix(t_out.frame_probs, t_out.frame_probs[perm], lam)
    s_out = student(mix(unlabeled, unlabeled[perm], lam))
    return mse(s_out.clip_probs, target_clip) + mse(s_out.frame_probs, target_frame)


def _sct_terms(student, batch, shift, t, T, fill, base_out):
    r = ramp_up(t, T)
    x = batch.x
    n_in = x.shape[-2]
    x_f = freq_shift(x, shift.nu, fill)
    out_f = student(x_f)
    x_t = time_shift(x, shift.tau)
    out_t = student(x_t)
    if base_out is None:
        with torch.no_grad():
            base_out = student(x)
    n_out = out_t.frame_probs.shape[-2]
    target = time_shift(base_out.frame_probs.detach(), output_shift(shift.tau, n_in, n_out), axis=-2)
    lb = LossBreakdown()
    lb.add("L_wf_bce", bce(out_f.clip_probs, batch.weak, batch.has_weak))
    lb.add("L_sf_bce", bce(out_f.frame_probs, batch.strong, batch.has_strong))
    lb.add("L_st_bce", bce(out_t.frame_probs, shift_labels(batch.strong, shift.tau, n_in), batch.has_strong))
    lb.add("L_st_mse", mse(out_t.frame_probs, target), r)
    return lb, x_t, x_f, out_t, out_f


def sct_loss(student, batch, shift, t: float, T: float, fill=LOG_FLOOR, base_out=None) -> LossBreakdown:
    """Shift consistency: BCE on frequency- and time-shifted inputs plus MSE to the shifted prediction.

    The MSE target ``time_shift(F(x))`` is held constant.
    """
    return _sct_terms(student, batch, shift, t, T, fill, base_out)[0]


def scmt_loss(student, teacher, batch, shift, t: float, T: float, noise_sigma: float = 0.5,
              generator=None, fill=LOG_FLOOR, base_out=None) -> LossBreakdown:
    """SCT plus ramped student-teacher MSE on the shifted inputs (teacher sees them with noise)."""
    lb, x_t, x_f, out_t, out_f = _sct_terms(student, batch, shift, t, T, fill, base_out)
    r = ramp_up(t, T)
    with torch.no_grad():
        tt = teacher(add_noise(x_t, noise_sigma, generator))
        tf = teacher(add_noise(x_f, noise_sigma, generator))
    lb.add("Lp_wt_mse", mse(out_t.clip_probs, tt.clip_probs), r)
    lb.add("Lp_wf_mse", mse(out_f.clip_probs, tf.clip_probs), r)
    lb.add("Lp_st_mse", mse(out_t.frame_probs, tt.frame_probs), r)
    lb.add("Lp_sf_mse", mse(out_f.frame_probs, tf.frame_probs), r)
    return lb
