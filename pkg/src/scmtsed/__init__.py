"""Semi-supervised sound event detection with shift-consistency mean teachers and domain adaptation."""

from .analysis import silhouette, silhouette_score, tsne
from .events import EventLabel, decode_events, event_f1
from .features import AudioClip, NormStats, log_mel
from .model import ModelConfig, SEDModel, build_model, load_checkpoint, preset, save_checkpoint
from .train import TrainingConfig, train_stage1, train_stage2

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "EventLabel", "ModelConfig", "NormStats", "SEDModel", "TrainingConfig",
    "build_model", "decode_events", "event_f1", "load_checkpoint", "log_mel", "preset",
    "save_checkpoint", "silhouette", "silhouette_score", "train_stage1", "train_stage2", "tsne",
]
