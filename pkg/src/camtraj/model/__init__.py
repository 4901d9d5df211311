"""Conditional auto-regressive trajectory generator.

Condition encoders (text, optional RGBD) produce a latent code Z that is
prepended to the token embeddings of a causal decoder; training minimizes
next-token cross-entropy plus a small L2 penalty on Z; sampling masks the
logits so every generated sequence is structurally valid.
"""

from .config import ModelConfig, TrainConfig, desk_config
from .decoder import (
    ConditionalTrajectoryModel,
    LossBreakdown,
    TrajectoryDecoder,
    compute_loss,
    fuse_conditions,
)
from .generate import generate
from .text import CaptionTokenizer, TextEncoder
from .train import (
    TrainResult,
    load_checkpoint,
    prepare_dataset,
    save_checkpoint,
    train,
)
from .vision import RgbdEncoder

__all__ = [
    "CaptionTokenizer",
    "ConditionalTrajectoryModel",
    "LossBreakdown",
    "ModelConfig",
    "RgbdEncoder",
    "TextEncoder",
    "TrainConfig",
    "TrainResult",
    "TrajectoryDecoder",
    "compute_loss",
    "desk_config",
    "fuse_conditions",
    "generate",
    "load_checkpoint",
    "prepare_dataset",
    "save_checkpoint",
    "train",
]
