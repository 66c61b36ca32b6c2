"""Adversarial domain adaptation through the gradient-reversal layer."""

from __future__ import annotations

import logging

import torch

from .ssl import LossBreakdown, bce

log = logging.getLogger(__name__)


def domain_targets(domain: torch.Tensor, n_frames: int) -> torch.Tensor:
    """Clip domain tag (0 synthetic, 1 real) broadcast over output frames."""
    return domain.float()[:, None].expand(-1, n_frames)


def domain_loss(domain_probs: torch.Tensor, domain: torch.Tensor) -> tuple[torch.Tensor, bool]:
    """Frame-level BCE against the broadcast domain tag; the flag marks a single-domain batch."""
    degenerate = bool(domain.min() == domain.max())
    if degenerate:
        log.warning("single-domain batch: domain loss is degenerate")
    return bce(domain_probs, domain_targets(domain, domain_probs.shape[-1])), degenerate


def ada_objective(student_out, domain_probs, batch, lambda_d: float) -> LossBreakdown:
    """L_s + L_w + lambda_d * L_d.

    ``domain_probs`` must come through the reversal layer, which flips the
    sign of the domain gradient for the feature extractor; the discriminator
    itself descends L_d.
    """
    lb = LossBreakdown()
    lb.add("L_w_bce", bce(student_out.clip_probs, batch.weak, batch.has_weak))
    lb.add("L_s_bce", bce(student_out.frame_probs, batch.strong, batch.has_strong))
    l_d, _ = domain_loss(domain_probs, batch.domain)
    lb.add("L_d", l_d, lambda_d)
    return lb


def adversarial_step(model, optimizer, batch, lambda_d: float) -> LossBreakdown:
    """One simultaneous update of (theta_f, theta_y) on E and theta_d on L_d."""
    optimizer.zero_grad(set_to_none=True)
    out = model(batch.x)
    domain_probs = model.discriminate_frames(out.embedding, 1.0)
    lb = ada_objective(out, domain_probs, batch, lambda_d)
    lb.check_finite()
    lb.total.backward()
    for group, params in model.parameter_groups().items():
        for p in params:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise FloatingPointError(f"non-finite gradient in parameter group {group}")
    optimizer.step()
    return lb


def lambda_schedule(step: int, total_steps: int, lambda_d: float, warmup_frac: float = 0.1) -> float:
    """Linear warm-up of the adversarial weight over the first ``warmup_frac`` of stage 2."""
    warm = warmup_frac * total_steps
    if warm <= 0:
        return lambda_d
    return lambda_d * min(1.0, (step + 1) / warm)


@torch.no_grad()
def domain_accuracy(model, x: torch.Tensor, domain: torch.Tensor, batch_size: int = 32) -> float:
    """Clip-level accuracy of the discriminator (frame probabilities averaged per clip)."""
    was_training = model.training
    model.eval()
    correct = 0
    for i in range(0, len(x), batch_size):
        out = model(x[i : i + batch_size])
        p = model.discriminator(out.embedding).mean(dim=1)
        correct += int(((p > 0.5).float() == domain[i : i + batch_size]).sum())
    model.train(was_training)
    return correct / max(len(x), 1)
