"""Model and training-schedule configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

from ..errors import ValidationError


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    The defaults are the full-scale reference settings; ``desk_config``
    returns the small configuration used by the test suite (trainable on a
    laptop CPU in minutes).
    """

    bins: int = 256
    traj_len: int = 60
    latent_dim: int = 1024
    layers: int = 12
    heads: int = 12
    m_text: int = 77
    m_image: int = 257
    m_depth: int = 257
    latent_reg: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        # Attention runs at heads * (latent_dim // heads) width, so heads
        # need not divide latent_dim exactly (the reference setting is
        # 1024 wide with 12 heads), but must not exceed it.
        if self.heads > self.latent_dim:
            raise ValidationError(
                f"heads {self.heads} exceed latent_dim {self.latent_dim}")
        for name in ("bins", "traj_len", "latent_dim", "layers", "heads",
                     "m_text", "m_image", "m_depth"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")

    @property
    def vocab_size(self) -> int:
        return self.bins + 4

    @property
    def bos(self) -> int:
        return self.bins + 1

    @property
    def eos(self) -> int:
        return self.bins + 2

    @property
    def pad(self) -> int:
        return self.bins + 3

    @property
    def value_tokens(self) -> int:
        """Value tokens in one full-length trajectory."""
        return 10 * self.traj_len

    def m_total(self, modality: str) -> int:
        if modality == "text":
            return self.m_text
        if modality == "rgbd":
            return self.m_text + self.m_image + self.m_depth
        raise ValidationError(f"unknown modality {modality!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def desk_config(**overrides) -> ModelConfig:
    """Laptop-scale configuration: 4 layers, L=128, 30-pose trajectories.

    RGBD latents are sized for 64x64 grids (16 patches + 1 summary row).
    """
    params = dict(bins=256, traj_len=30, latent_dim=128, layers=4, heads=4,
                  m_text=77, m_image=17, m_depth=17)
    params.update(overrides)
    return ModelConfig(**params)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule.  Defaults follow the reference recipe
    (AdamW, batch 16, lr 1e-5, betas (0.9, 0.95), weight decay 0.01);
    desk-scale runs override lr and epochs."""

    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.01
    seed: int = 0
    shuffle: bool = True
    stop_at_ce: float = 0.0       # stop early once mean CE drops this low (0 = off)
    checkpoint_every: int = 0     # epochs; 0 = only at the end
    threads: int = 0              # 0 = leave torch's default

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ValidationError("lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)
