"""Causal decoder over trajectory tokens with prepended condition rows.

Input embedding: learned positional embeddings over the concatenation of
the condition latent Z and the codebook rows of the previous token ids.
The attention mask lets every position see all Z rows and earlier tokens
only.  Loss: next-token cross-entropy (PAD targets masked out) plus
latent_reg * ||Z||^2.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ValidationError
from .config import ModelConfig
from .nn import TransformerBlock, condition_causal_mask, init_weights
from .text import TextEncoder
from .vision import RgbdEncoder, depth_to_grid


def fuse_conditions(text: torch.Tensor,
                    image: torch.Tensor | None = None,
                    depth: torch.Tensor | None = None) -> torch.Tensor:
    """Row-wise concatenation [Z_text; Z_image; Z_depth].

    Text is mandatory; image and depth must be given together (the model
    defines only text and text+RGBD modes).
    """
    if (image is None) != (depth is None):
        raise ValidationError("image and depth latents must be given together")
    if image is None:
        return text
    return torch.cat([text, image, depth], dim=-2)


class TrajectoryDecoder(nn.Module):
    """Token logits over bins+4 classes, conditioned on a latent prefix."""

    def __init__(self, cfg: ModelConfig, m_cond: int):
        super().__init__()
        self.cfg = cfg
        self.m_cond = m_cond
        self.max_tokens = cfg.value_tokens + 2  # BOS + values + EOS
        self.codebook = nn.Embedding(cfg.vocab_size, cfg.latent_dim)
        self.pos = nn.Embedding(m_cond + self.max_tokens, cfg.latent_dim)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.latent_dim, cfg.heads) for _ in range(cfg.layers))
        self.ln = nn.LayerNorm(cfg.latent_dim)
        self.head = nn.Linear(cfg.latent_dim, cfg.vocab_size)
        init_weights(self, cfg.layers)

    def forward(self, latent: torch.Tensor, token_ids: torch.Tensor) -> torch.Tensor:
        """(batch, M, L) latent + (batch, P) previous ids -> (batch, P, vocab)
        logits, one row per token position."""
        b, m, _ = latent.shape
        if m != self.m_cond:
            raise ValidationError(f"latent has {m} rows, decoder expects {self.m_cond}")
        p = token_ids.shape[1]
        if p > self.max_tokens:
            raise ValidationError(
                f"token sequence length {p} exceeds capacity {self.max_tokens}")
        x = torch.cat([latent, self.codebook(token_ids)], dim=1)
        x = x + self.pos.weight[None, : m + p]
        mask = condition_causal_mask(m, p, x.dtype, x.device)
        for block in self.blocks:
            x = block(x, attn_mask=mask)
        return self.head(self.ln(x[:, m:]))

    # Incremental decoding ----------------------------------------------------

    def start_cache(self, latent: torch.Tensor) -> list[dict]:
        """Prime a KV cache with the condition rows; returns per-block caches."""
        caches = [dict() for _ in self.blocks]
        x = latent + self.pos.weight[None, : latent.shape[1]]
        mask = condition_causal_mask(latent.shape[1], 0, x.dtype, x.device)
        for block, cache in zip(self.blocks, caches):
            x = block(x, attn_mask=mask, cache=cache)
        return caches

    def step(self, caches: list[dict], token_ids: torch.Tensor,
             position: int) -> torch.Tensor:
        """Append one token per sequence; returns (batch, vocab) logits.

        ``position`` is the token's index in the token stream (0 = BOS).
        New positions may attend to everything already in the cache, so no
        mask is needed.
        """
        x = self.codebook(token_ids)[:, None, :]
        x = x + self.pos.weight[None, self.m_cond + position]
        for block, cache in zip(self.blocks, caches):
            x = block(x, cache=cache)
        return self.head(self.ln(x[:, 0]))


class LossBreakdown(NamedTuple):
    total: torch.Tensor
    cross_entropy: float
    regularizer: float


def compute_loss(logits: torch.Tensor, target_ids: torch.Tensor,
                 latent: torch.Tensor, reg_weight: float,
                 pad_id: int) -> LossBreakdown:
    """Mean next-token cross-entropy over non-PAD targets plus
    reg_weight * ||Z||^2 (averaged over the batch)."""
    if logits.shape[:-1] != target_ids.shape:
        raise ValidationError(
            f"logits {tuple(logits.shape)} do not align with targets "
            f"{tuple(target_ids.shape)}")
    keep = target_ids != pad_id
    ce = F.cross_entropy(logits[keep], target_ids[keep])
    reg = reg_weight * latent.pow(2).sum() / (latent.shape[0] if latent.dim() == 3 else 1)
    total = ce + reg
    return LossBreakdown(total, float(ce.detach()), float(reg.detach()))


class ConditionalTrajectoryModel(nn.Module):
    """Text (or text+RGBD) conditioned trajectory token generator."""

    def __init__(self, cfg: ModelConfig, modality: str = "text"):
        super().__init__()
        if modality not in ("text", "rgbd"):
            raise ValidationError(f"unknown modality {modality!r}")
        torch.manual_seed(cfg.seed)
        self.cfg = cfg
        self.modality = modality
        self.text_encoder = TextEncoder(cfg)
        if modality == "rgbd":
            self.image_encoder = RgbdEncoder(cfg, cfg.m_image)
            self.depth_encoder = RgbdEncoder(cfg, cfg.m_depth)
        self.decoder = TrajectoryDecoder(cfg, cfg.m_total(modality))

    def encode_conditions(self, captions: list[str],
                          images: torch.Tensor | None = None,
                          depths: torch.Tensor | None = None) -> torch.Tensor:
        z_text = self.text_encoder.encode_captions(captions)
        if self.modality == "text":
            if images is not None or depths is not None:
                raise ValidationError("text-only model got RGBD inputs")
            return fuse_conditions(z_text)
        if images is None or depths is None:
            raise ValidationError("rgbd model requires both image and depth grids")
        if images.shape[1:3] != depths.shape[1:3]:
            raise ValidationError(
                f"image {tuple(images.shape[1:3])} and depth "
                f"{tuple(depths.shape[1:3])} sizes differ")
        z_img = self.image_encoder(images)
        z_dep = self.depth_encoder(depth_to_grid(depths))
        return fuse_conditions(z_text, z_img, z_dep)

    def forward(self, latent: torch.Tensor, token_ids: torch.Tensor) -> torch.Tensor:
        return self.decoder(latent, token_ids)

    def loss(self, latent: torch.Tensor, token_ids: torch.Tensor) -> LossBreakdown:
        """Teacher-forced loss on full sequences (BOS ... EOS [PAD...])."""
        logits = self.decoder(latent, token_ids[:, :-1])
        return compute_loss(logits, token_ids[:, 1:], latent,
                            self.cfg.latent_reg, self.cfg.pad)
