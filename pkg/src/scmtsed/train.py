"""Two-stage training: semi-supervised stage 1, adversarial stage 2."""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import yaml

from . import adapt
from .augment import add_noise, sample_lambda, sample_shift
from .data import TRAIN_SPLITS, ClipSet, load_split, normalized_floor, read_pseudo_labels
from .events import decode_events, event_f1
from .features import NormStats
from .model import SEDModel, build_model, load_checkpoint, preset, save_checkpoint
from .ssl import LossBreakdown, ema_update, ict_loss, mean_teacher_loss, ramp_up, sct_loss, scmt_loss

log = logging.getLogger(__name__)

STRATEGIES = ("none", "ict", "sct", "scmt")


@dataclass
class TrainingConfig:
    strategy: str = "scmt"
    preset: str = "tiny"
    steps: int = 2000
    T: int = 1000  # ramp-up length in steps
    ema_alpha: float = 0.999
    lambda_d: float = 0.1
    lambda_d_warmup_frac: float = 0.1
    stage2_frac: float = 0.5
    noise_sigma: float = 0.5
    beta_params: tuple[float, float] = (0.5, 0.5)
    # clips per batch from (strong synthetic, weak real, unlabeled real)
    batch_composition: tuple[int, int, int] = (4, 4, 8)
    lr: float = 1e-3
    max_shift_seconds: float = 2.0
    max_shift_bins: int = 4
    seed: int = 0
    eval_interval: int = 0  # 0: evaluate only at the end
    checkpoint_interval: int = 0
    decode_threshold: float = 0.5
    median_window: int = 7
    pseudo_labels: str = ""
    validation_limit: int = 0  # 0: whole validation split

    def __post_init__(self):
        self.strategy = self.strategy.lower()
        self.beta_params = tuple(float(v) for v in self.beta_params)
        self.batch_composition = tuple(int(v) for v in self.batch_composition)
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if not 0.0 <= self.ema_alpha < 1.0:
            raise ValueError("ema_alpha must be in [0, 1)")
        if self.lambda_d < 0:
            raise ValueError("lambda_d must be non-negative")
        if any(c < 0 for c in self.batch_composition) or sum(self.batch_composition[:2]) == 0:
            raise ValueError("batch composition needs non-negative counts and at least one labeled source")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["beta_params"] = list(self.beta_params)
        d["batch_composition"] = list(self.batch_composition)
        return d

    def save(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainingConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()) or {})


@dataclass
class TrainData:
    sources: list[ClipSet]  # aligned with TRAIN_SPLITS
    validation: ClipSet | None
    stats: NormStats

    @property
    def n_out_frames(self) -> int:
        return self.sources[0].strong.shape[1]


def load_train_data(data_dir, cache_dir, n_out_frames: int, pseudo_labels: str = "",
                    validation_limit: int = 0, stats: NormStats | None = None) -> TrainData:
    stats = stats or NormStats.load(Path(cache_dir) / "stats.json")
    pseudo = read_pseudo_labels(pseudo_labels) if pseudo_labels else None
    sources = [load_split(data_dir, cache_dir, s, n_out_frames, stats, pseudo=pseudo) for s in TRAIN_SPLITS]
    try:
        val = load_split(data_dir, cache_dir, "validation", n_out_frames, stats, limit=validation_limit or None)
    except (KeyError, FileNotFoundError):
        val = None
    return TrainData(sources, val, stats)


def set_determinism():
    torch.use_deterministic_algorithms(True, warn_only=True)


@torch.no_grad()
def predict(model: SEDModel, x: torch.Tensor, batch_size: int = 32):
    """Eval-mode forward in chunks; returns (clip_probs, frame_probs, embedding) as numpy."""
    was_training = model.training
    model.eval()
    clips, frames, embs = [], [], []
    for i in range(0, len(x), batch_size):
        out = model(x[i : i + batch_size])
        clips.append(out.clip_probs)
        frames.append(out.frame_probs)
        embs.append(out.embedding)
    model.train(was_training)
    return torch.cat(clips).numpy(), torch.cat(frames).numpy(), torch.cat(embs).numpy()


def evaluate_f1(model: SEDModel, clips: ClipSet, threshold: float = 0.5, median_window: int = 7):
    _, frame_probs, _ = predict(model, clips.x)
    predicted = [decode_events(fp, threshold, median_window) for fp in frame_probs]
    return event_f1(predicted, clips.events)


class Trainer:
    """Shared step logic; ``adversarial`` switches on the stage-2 domain term."""

    def __init__(self, cfg: TrainingConfig, data: TrainData, student: SEDModel, teacher: SEDModel,
                 stage: int, start_step: int = 0, adversarial: bool = False):
        self.cfg = cfg
        self.data = data
        self.student = student
        self.teacher = teacher
        self.stage = stage
        self.start_step = start_step
        self.adversarial = adversarial
        self.rng = np.random.default_rng([cfg.seed, stage])
        self.noise_gen = torch.Generator().manual_seed(cfg.seed * 7919 + stage)
        self.fill = normalized_floor(data.stats)
        self.optimizer = torch.optim.Adam(student.parameters(), lr=cfg.lr)
        for p in teacher.parameters():
            p.requires_grad_(False)
        self.stride = data.sources[0].x.shape[1] // data.n_out_frames

    def sample_batch(self) -> ClipSet:
        parts = []
        for source, count in zip(self.data.sources, self.cfg.batch_composition):
            if count == 0 or len(source) == 0:
                continue
            idx = self.rng.choice(len(source), size=min(count, len(source)), replace=False)
            parts.append(source.subset(np.sort(idx)))
        return ClipSet.concat(parts)

    def step_losses(self, batch: ClipSet, t: int, lambda_d: float) -> LossBreakdown:
        cfg = self.cfg
        student, teacher = self.student, self.teacher
        out = student(batch.x)
        with torch.no_grad():
            t_out = teacher(add_noise(batch.x, cfg.noise_sigma, self.noise_gen))
        lb = mean_teacher_loss(out, t_out, batch, t, cfg.T)
        if cfg.strategy == "ict":
            pool = batch.source == TRAIN_SPLITS.index("unlabeled_real")
            u = batch.x[pool]
            lam = sample_lambda(self.rng, cfg.beta_params)
            perm = self.rng.permutation(len(u)) if len(u) else None
            lb.add("L_ict", ict_loss(student, teacher, u, lam, perm), ramp_up(t, cfg.T))
        elif cfg.strategy in ("sct", "scmt"):
            shift = sample_shift(self.rng, cfg.max_shift_seconds, cfg.max_shift_bins, quantum=self.stride)
            if cfg.strategy == "sct":
                lb.update(sct_loss(student, batch, shift, t, cfg.T, self.fill, base_out=out))
            else:
                lb.update(scmt_loss(student, teacher, batch, shift, t, cfg.T, cfg.noise_sigma,
                                    self.noise_gen, self.fill, base_out=out))
        if self.adversarial:
            domain_probs = student.discriminate_frames(out.embedding, 1.0)
            l_d, _ = adapt.domain_loss(domain_probs, batch.domain)
            lb.add("L_d", l_d, lambda_d)
        return lb

    def train_step(self, local_step: int, lambda_d: float = 0.0) -> tuple[LossBreakdown, float]:
        t = self.start_step + local_step
        batch = self.sample_batch()
        self.optimizer.zero_grad(set_to_none=True)
        lb = self.step_losses(batch, t, lambda_d)
        lb.check_finite()
        lb.total.backward()
        self.optimizer.step()
        ema_update(self.student, self.teacher, self.cfg.ema_alpha)
        return lb, ramp_up(t, self.cfg.T)


def _analysis_clips(data: TrainData, per_domain: int = 32) -> tuple[torch.Tensor, torch.Tensor]:
    synth = data.sources[0]
    real = data.validation if data.validation is not None else data.sources[2]
    k_s, k_r = min(per_domain, len(synth)), min(per_domain, len(real))
    x = torch.cat([synth.x[:k_s], real.x[:k_r]])
    d = torch.cat([synth.domain[:k_s], real.domain[:k_r]])
    return x, d


def _run(cfg: TrainingConfig, data: TrainData, student: SEDModel, teacher: SEDModel, out_dir, stage: int,
         steps: int, start_step: int = 0, adversarial: bool = False, extra: dict | None = None) -> dict:
    set_determinism()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "config.yaml")
    torch.manual_seed(cfg.seed)
    trainer = Trainer(cfg, data, student, teacher, stage, start_step, adversarial)
    log_path = out_dir / "metrics.jsonl"
    analysis = _analysis_clips(data) if adversarial else None
    ckpt_extra = {
        "stage": stage,
        "training_config": cfg.to_dict(),
        "norm_stats": {"mean": data.stats.mean.tolist(), "std": data.stats.std.tolist()},
        **(extra or {}),
    }

    def evaluate(record: dict):
        if data.validation is not None:
            record["f1"] = evaluate_f1(student, data.validation, cfg.decode_threshold, cfg.median_window).macro_f1
        if analysis is not None:
            record["domain_accuracy"] = adapt.domain_accuracy(student, *analysis)

    def checkpoint(path, step):
        save_checkpoint(path, student, step, {**ckpt_extra, "teacher_state": teacher.state_dict()})

    with open(log_path, "w") as fh:
        if adversarial:
            record = {"step": start_step, "event": "start"}
            record["domain_accuracy"] = adapt.domain_accuracy(student, *analysis)
            fh.write(json.dumps(record) + "\n")
        for k in range(steps):
            lam = adapt.lambda_schedule(k, steps, cfg.lambda_d, cfg.lambda_d_warmup_frac) if adversarial else 0.0
            lb, r = trainer.train_step(k, lam)
            step = start_step + k + 1
            record = {"step": step, **lb.as_floats(), "ramp": r, "lr": cfg.lr}
            if adversarial:
                record["lambda_d"] = lam
            if cfg.eval_interval and step % cfg.eval_interval == 0 and k + 1 < steps:
                evaluate(record)
            fh.write(json.dumps(record) + "\n")
            if cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
                checkpoint(out_dir / f"checkpoint_{step:07d}.pt", step)
        final = {"step": start_step + steps, "event": "final"}
        evaluate(final)
        fh.write(json.dumps(final) + "\n")
    checkpoint(out_dir / "checkpoint.pt", start_step + steps)
    return {"checkpoint": str(out_dir / "checkpoint.pt"), "metrics": str(log_path), **final}


def train_stage1(cfg: TrainingConfig, data: TrainData, out_dir) -> dict:
    student = build_model(preset(cfg.preset), seed=cfg.seed)
    teacher = copy.deepcopy(student)
    return _run(cfg, data, student, teacher, out_dir, stage=1, steps=cfg.steps)


def load_for_stage2(checkpoint_path, seed: int):
    student, step, extra = load_checkpoint(checkpoint_path)
    teacher = copy.deepcopy(student)
    if "teacher_state" in extra:
        teacher.load_state_dict(extra["teacher_state"])
    student.reset_discriminator(seed=seed)
    return student, teacher, step, extra


def train_stage2(checkpoint_path, cfg: TrainingConfig, data: TrainData, out_dir, ada: bool = True,
                 steps: int | None = None) -> dict:
    """Continue from a stage-1 checkpoint with a fresh discriminator; ``ada=False`` just continues stage 1."""
    student, teacher, start, extra = load_for_stage2(checkpoint_path, cfg.seed)
    if steps is None:
        stage1_steps = extra.get("training_config", {}).get("steps", cfg.steps)
        steps = int(round(cfg.stage2_frac * stage1_steps))
    return _run(cfg, data, student, teacher, out_dir, stage=2, steps=steps, start_step=start,
                adversarial=ada, extra={"parent": str(checkpoint_path), "ada": ada})


def read_metrics(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
