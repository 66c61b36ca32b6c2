"""FP-CRNN backbone, attention pooling, gradient reversal and domain discriminator."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

N_CLASSES = 10


class NonFiniteError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    n_frames: int = 648
    n_mels: int = 128
    n_classes: int = N_CLASSES
    # (time, freq) average pooling applied to the input before the first conv
    input_pool: tuple[int, ...] = (1, 1)
    channels: tuple[int, ...] = (32, 64, 128)
    time_pools: tuple[int, ...] = (2, 2, 2)
    freq_pools: tuple[int, ...] = (4, 4, 4)
    pyramid: bool = True
    # 0-based indices of CNN stages merged by the pyramid
    pyramid_stages: tuple[int, ...] = (1, 2)
    pyramid_dim: int = 128
    rnn_hidden: int = 128
    disc_hidden: int = 128
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("input_pool", "channels", "time_pools", "freq_pools", "pyramid_stages"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        if not (len(self.channels) == len(self.time_pools) == len(self.freq_pools)):
            raise ValueError("channels, time_pools and freq_pools must have equal length")

    @property
    def d_embed(self) -> int:
        return 2 * self.rnn_hidden

    @property
    def n_out_frames(self) -> int:
        total = self.input_pool[0]
        for p in self.time_pools:
            total *= p
        return self.n_frames // total

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


PRESETS = {
    "default": ModelConfig(),
    "tiny": ModelConfig(
        input_pool=(2, 4),
        channels=(8, 16, 32),
        time_pools=(1, 2, 2),
        freq_pools=(2, 2, 2),
        pyramid_dim=32,
        rnn_hidden=32,
        disc_hidden=32,
    ),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return dataclasses.replace(PRESETS[name], **overrides)


class ModelOutput(NamedTuple):
    clip_probs: torch.Tensor  # [B, C]
    frame_probs: torch.Tensor  # [B, T, C]
    embedding: torch.Tensor  # [B, T, d_embed]


class _GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lambda_d):
        ctx.lambda_d = lambda_d
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.lambda_d, None


def grl(x: torch.Tensor, lambda_d: float) -> torch.Tensor:
    """Identity on the forward pass; scales the gradient by ``-lambda_d`` on the way back."""
    if lambda_d < 0:
        raise ValueError("lambda_d must be non-negative")
    return _GradReverse.apply(x, float(lambda_d))


class GradientReversal(nn.Module):
    def __init__(self, lambda_d: float = 1.0):
        super().__init__()
        self.lambda_d = lambda_d

    def forward(self, x):
        return grl(x, self.lambda_d)


class ConvBlock(nn.Module):
    """conv3x3 -> batch norm -> GLU -> average pool."""

    def __init__(self, c_in, c_out, pool):
        super().__init__()
        self.conv = nn.Conv2d(c_in, 2 * c_out, kernel_size=3, padding=1)
        self.bn = nn.BatchNorm2d(2 * c_out)
        self.pool = nn.AvgPool2d(pool)

    def forward(self, x):
        return self.pool(F.glu(self.bn(self.conv(x)), dim=1))


class FeaturePyramid(nn.Module):
    """Top-down merge of CNN stage outputs given as [B, C_k, T_k] sequences.

    Each stage gets a 1x1 lateral projection to ``dim`` channels; the deeper
    merged map is upsampled (nearest, along time) and added to the next
    shallower lateral map.
    """

    def __init__(self, in_channels: Sequence[int], dim: int):
        super().__init__()
        self.laterals = nn.ModuleList(nn.Conv1d(c, dim, kernel_size=1) for c in in_channels)
        self.dim = dim

    def forward(self, features: Sequence[torch.Tensor]) -> torch.Tensor:
        return fp_merge(features, self.laterals)


def fp_merge(features: Sequence[torch.Tensor], laterals: Sequence[nn.Module] | None = None) -> torch.Tensor:
    """Fuse ``features`` (ordered shallow to deep) into one sequence at the shallowest rate.

    With ``laterals=None`` the projections are identities, so the channel
    counts of all stages must already agree.
    """
    if len(features) == 0:
        raise ValueError("fp_merge needs at least one feature map")
    lengths = [f.shape[-1] for f in features]
    if any(b >= a for a, b in zip(lengths, lengths[1:])):
        raise ValueError(f"stage time lengths must strictly decrease, got {lengths}")
    if laterals is None:
        projected = list(features)
    else:
        projected = [lat(f) for lat, f in zip(laterals, features)]
    widths = {p.shape[1] for p in projected}
    if len(widths) != 1:
        raise ValueError(f"incompatible channel counts after projection: {sorted(widths)}")
    merged = projected[-1]
    for lateral in reversed(projected[:-1]):
        up = F.interpolate(merged, size=lateral.shape[-1], mode="nearest")
        merged = up + lateral
    return merged


def attention_pool(frame_probs: torch.Tensor, attention_logits: torch.Tensor) -> torch.Tensor:
    """Clip probabilities as the softmax-over-time weighted mean of frame probabilities.

    Both inputs are ``[..., T, C]``; the result is ``[..., C]``.
    """
    if frame_probs.shape != attention_logits.shape:
        raise ValueError("frame_probs and attention_logits must share a shape")
    weights = torch.softmax(attention_logits, dim=-2)
    return (weights * frame_probs).sum(dim=-2).clamp(0.0, 1.0)


class FeatureExtractor(nn.Module):
    """theta_f: CNN blocks, optional feature pyramid and the bidirectional GRU."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.input_pool = nn.AvgPool2d(cfg.input_pool) if cfg.input_pool != (1, 1) else nn.Identity()
        blocks = []
        c_in = 1
        for c, tp, fp in zip(cfg.channels, cfg.time_pools, cfg.freq_pools):
            blocks.append(ConvBlock(c_in, c, (tp, fp)))
            c_in = c
        self.blocks = nn.ModuleList(blocks)

        # width of each stage once frequency is folded into channels
        widths = []
        n_freq = cfg.n_mels // cfg.input_pool[1]
        for c, fp in zip(cfg.channels, cfg.freq_pools):
            n_freq //= fp
            widths.append(c * n_freq)
        self.stage_widths = widths

        if cfg.pyramid and len(cfg.pyramid_stages) >= 2:
            self.pyramid = FeaturePyramid([widths[i] for i in cfg.pyramid_stages], cfg.pyramid_dim)
            rnn_in = cfg.pyramid_dim
        else:
            self.pyramid = None
            rnn_in = widths[-1]
        self.dropout = nn.Dropout(cfg.dropout)
        self.rnn = nn.GRU(rnn_in, cfg.rnn_hidden, batch_first=True, bidirectional=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: [B, T, F]
        h = self.input_pool(x.unsqueeze(1))
        stages = []
        for block in self.blocks:
            h = block(h)
            b, c, t, f = h.shape
            stages.append(h.permute(0, 1, 3, 2).reshape(b, c * f, t))
        if self.pyramid is not None:
            fused = self.pyramid([stages[i] for i in self.cfg.pyramid_stages])
            seq = F.adaptive_avg_pool1d(fused, self.cfg.n_out_frames)
        else:
            seq = stages[-1]
        seq = self.dropout(seq.transpose(1, 2))
        out, _ = self.rnn(seq)
        return out  # [B, T_out, d_embed]


class LabelPredictor(nn.Module):
    """theta_y: per-frame classifier and attention head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.classifier = nn.Linear(cfg.d_embed, cfg.n_classes)
        self.attention = nn.Linear(cfg.d_embed, cfg.n_classes)

    def forward(self, embedding):
        frame_probs = torch.sigmoid(self.classifier(embedding))
        clip_probs = attention_pool(frame_probs, self.attention(embedding))
        return clip_probs, frame_probs


class DomainDiscriminator(nn.Module):
    """theta_d: per-frame feed-forward stack giving P(real)."""

    def __init__(self, d_embed: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_embed, hidden),
            nn.ReLU(),
            nn.Linear(hidden, hidden),
            nn.ReLU(),
        )
        self.out = nn.Linear(hidden, 1)

    def forward(self, embedding):
        return torch.sigmoid(self.out(self.net(embedding))).squeeze(-1)


class SEDModel(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.features = FeatureExtractor(self.cfg)
        self.head = LabelPredictor(self.cfg)
        self.discriminator = DomainDiscriminator(self.cfg.d_embed, self.cfg.disc_hidden)

    def forward(self, x: torch.Tensor) -> ModelOutput:
        emb = self.features(x)
        clip_probs, frame_probs = self.head(emb)
        out = ModelOutput(clip_probs, frame_probs, emb)
        check_finite(out)
        return out

    def discriminate_frames(self, embedding: torch.Tensor, lambda_d: float = 1.0) -> torch.Tensor:
        """Per-frame domain probability, with the gradient reversed on the way into theta_f."""
        return self.discriminator(grl(embedding, lambda_d))

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        return {
            "theta_f": list(self.features.parameters()),
            "theta_y": list(self.head.parameters()),
            "theta_d": list(self.discriminator.parameters()),
        }

    def reset_discriminator(self, seed: int | None = None):
        gen = torch.Generator().manual_seed(seed) if seed is not None else None
        for m in self.discriminator.modules():
            if isinstance(m, nn.Linear):
                bound = 1.0 / m.in_features ** 0.5
                with torch.no_grad():
                    m.weight.uniform_(-bound, bound, generator=gen)
                    m.bias.uniform_(-bound, bound, generator=gen)


def check_finite(out: ModelOutput):
    for name, t in zip(out._fields, out):
        if not torch.isfinite(t).all():
            bad = (~torch.isfinite(t)).sum().item()
            raise NonFiniteError(f"non-finite values in {name}: {bad} of {t.numel()} entries")


def clip_embedding(out: ModelOutput) -> torch.Tensor:
    """One vector per clip: time-mean of the recurrent output."""
    return out.embedding.mean(dim=1)


def build_model(cfg: ModelConfig | str = "default", seed: int | None = None) -> SEDModel:
    if isinstance(cfg, str):
        cfg = preset(cfg)
    if seed is not None:
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            return SEDModel(cfg)
    return SEDModel(cfg)


CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: SEDModel, step: int = 0, extra: dict | None = None):
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "config": model.cfg.to_dict(),
            "step": int(step),
            "state": model.state_dict(),
            "extra": extra or {},
        },
        path,
    )


class CheckpointError(RuntimeError):
    pass


def load_checkpoint(path, model: SEDModel | None = None):
    """Return ``(model, step, extra)``; loading into ``model`` checks the architecture."""
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob.get('version')!r}")
    if model is None:
        model = SEDModel(ModelConfig.from_dict(blob["config"]))
    own = model.state_dict()
    for name, value in blob["state"].items():
        if name not in own:
            raise CheckpointError(f"unexpected parameter {name!r} in checkpoint")
        if own[name].shape != value.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: model {tuple(own[name].shape)} vs checkpoint {tuple(value.shape)}"
            )
    for name in own:
        if name not in blob["state"]:
            raise CheckpointError(f"parameter {name!r} missing from checkpoint")
    model.load_state_dict(blob["state"])
    return model, blob["step"], blob["extra"]
