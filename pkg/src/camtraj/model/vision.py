"""Patch-based image/depth encoders for the RGBD-conditioned mode.

A grid is split into 16x16 patches, each linearly embedded; a summary row
(learned token plus the mean of the patch embeddings) is prepended, giving
exactly (H/16)*(W/16) + 1 rows.  Two bidirectional attention layers mix
the rows.  Depth grids are replicated to three channels before encoding.
"""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ValidationError
from .config import ModelConfig
from .nn import TransformerBlock, init_weights

PATCH = 16


class RgbdEncoder(nn.Module):
    """One modality (image or depth) -> (m_rows, latent_dim) latent."""

    N_LAYERS = 2

    def __init__(self, cfg: ModelConfig, m_rows: int):
        super().__init__()
        self.cfg = cfg
        self.m_rows = m_rows
        self.patch_embed = nn.Linear(3 * PATCH * PATCH, cfg.latent_dim)
        self.summary = nn.Parameter(torch.zeros(cfg.latent_dim))
        self.pos = nn.Embedding(m_rows, cfg.latent_dim)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.latent_dim, cfg.heads) for _ in range(self.N_LAYERS))
        self.ln = nn.LayerNorm(cfg.latent_dim)
        init_weights(self, self.N_LAYERS)

    def embed_patches(self, grids: torch.Tensor) -> torch.Tensor:
        """(batch, H, W, 3) -> (batch, m_rows, latent_dim), pre-attention.

        Row 0 is the summary (learned token + mean of the patch rows);
        positional embeddings are added, so swapping two patches' contents
        changes exactly the two corresponding rows.
        """
        b, h, w, c = grids.shape
        if c != 3:
            raise ValidationError(f"expected 3 channels, got {c}")
        if h % PATCH or w % PATCH:
            raise ValidationError(f"grid size {h}x{w} not divisible by {PATCH}")
        n_patches = (h // PATCH) * (w // PATCH)
        if n_patches + 1 != self.m_rows:
            raise ValidationError(
                f"{h}x{w} grid gives {n_patches + 1} rows, encoder expects "
                f"{self.m_rows}")
        patches = (grids
                   .reshape(b, h // PATCH, PATCH, w // PATCH, PATCH, 3)
                   .permute(0, 1, 3, 2, 4, 5)
                   .reshape(b, n_patches, 3 * PATCH * PATCH))
        rows = self.patch_embed(patches)
        summary = self.summary[None, None, :] + rows.mean(dim=1, keepdim=True)
        x = torch.cat([summary, rows], dim=1)
        return x + self.pos.weight[None, :]

    def forward(self, grids: torch.Tensor) -> torch.Tensor:
        x = self.embed_patches(grids)
        for block in self.blocks:
            x = block(x)
        return self.ln(x)


def depth_to_grid(depth: torch.Tensor) -> torch.Tensor:
    """(batch, H, W) non-negative depth -> 3-channel grid."""
    if torch.any(depth < 0) or not torch.all(torch.isfinite(depth)):
        raise ValidationError("depth values must be finite and >= 0")
    return depth[..., None].expand(*depth.shape, 3)
