"""Shared transformer building blocks (pre-norm, 4x feed-forward)."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


class SelfAttention(nn.Module):
    """Multi-head self-attention with an optional additive mask and an
    optional key/value cache for incremental decoding.

    Head width is dim // heads; when heads does not divide dim the
    attention runs at the slightly narrower heads * head_dim width and the
    output projection maps back to dim.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if heads > dim:
            raise ValueError(f"more heads ({heads}) than channels ({dim})")
        self.heads = heads
        self.head_dim = dim // heads
        inner = heads * self.head_dim
        self.qkv = nn.Linear(dim, 3 * inner)
        self.proj = nn.Linear(inner, dim)

    def forward(self, x, attn_mask=None, cache: dict | None = None):
        b, t, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        if cache is not None:
            if "k" in cache:
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            cache["k"], cache["v"] = k, v
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=attn_mask)
        out = out.transpose(1, 2).reshape(b, t, self.heads * self.head_dim)
        return self.proj(out)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))

    def forward(self, x, attn_mask=None, cache: dict | None = None):
        x = x + self.attn(self.ln1(x), attn_mask=attn_mask, cache=cache)
        return x + self.mlp(self.ln2(x))


def init_weights(module: nn.Module, n_layers: int) -> None:
    """Scaled-normal init: std 0.02 everywhere, residual output projections
    scaled down by 1/sqrt(2 * layers)."""
    resid_std = 0.02 / math.sqrt(2 * n_layers)
    for name, m in module.named_modules():
        if isinstance(m, nn.Linear):
            std = resid_std if name.endswith(("attn.proj", "mlp.2")) else 0.02
            nn.init.normal_(m.weight, mean=0.0, std=std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.normal_(m.weight, mean=0.0, std=0.02)


def condition_causal_mask(m_cond: int, n_tokens: int, dtype, device=None):
    """Additive mask over [Z rows; token rows]: every position sees all
    condition rows; token positions additionally see earlier tokens and
    themselves."""
    total = m_cond + n_tokens
    idx = torch.arange(total, device=device)
    allowed = (idx[None, :] < m_cond) | (idx[None, :] <= idx[:, None])
    mask = torch.zeros(total, total, dtype=dtype, device=device)
    mask.masked_fill_(~allowed, float("-inf"))
    return mask


def padding_mask(pad: torch.Tensor, dtype) -> torch.Tensor:
    """(batch, T) boolean pad flags -> additive (batch, 1, 1, T) mask."""
    mask = torch.zeros(pad.shape, dtype=dtype, device=pad.device)
    mask.masked_fill_(pad, float("-inf"))
    return mask[:, None, None, :]
