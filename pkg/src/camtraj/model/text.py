"""Caption tokenizer and the trainable text encoder.

The tokenizer lowercases, splits punctuation, and maps words over the
template-caption vocabulary to dedicated ids; anything else falls into one
of 4096 hash buckets (crc32), so arbitrary captions still tokenize
deterministically.  The encoder is a small bidirectional transformer whose
output is padded/truncated to exactly ``m_text`` rows.
"""

from __future__ import annotations

import re
import zlib

import torch
from torch import nn

from ..tagging import caption_vocabulary
from ..errors import ValidationError
from .config import ModelConfig
from .nn import TransformerBlock, init_weights, padding_mask

HASH_BUCKETS = 4096
_SPLIT = re.compile(r"[a-z0-9']+|[^\sa-z0-9']")


class CaptionTokenizer:
    """Deterministic word-level tokenizer with hash-bucket OOV handling."""

    def __init__(self, m_text: int):
        self.m_text = m_text
        self.pad_id = 0
        words = caption_vocabulary() + [".", ",", ";", "(", ")", "+"]
        self.word_to_id = {w: i + 1 for i, w in enumerate(words)}
        self.bucket_base = 1 + len(words)
        self.vocab_size = self.bucket_base + HASH_BUCKETS

    def encode(self, caption: str) -> list[int]:
        if not caption.strip():
            raise ValidationError("caption must be non-empty")
        ids = []
        for piece in _SPLIT.findall(caption.lower()):
            known = self.word_to_id.get(piece)
            if known is None:
                known = self.bucket_base + zlib.crc32(piece.encode()) % HASH_BUCKETS
            ids.append(known)
        ids = ids[: self.m_text]
        return ids + [self.pad_id] * (self.m_text - len(ids))

    def encode_batch(self, captions: list[str]) -> torch.Tensor:
        return torch.tensor([self.encode(c) for c in captions], dtype=torch.long)


class TextEncoder(nn.Module):
    """Caption -> (m_text, latent_dim) latent code."""

    N_LAYERS = 2

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.tokenizer = CaptionTokenizer(cfg.m_text)
        self.embed = nn.Embedding(self.tokenizer.vocab_size, cfg.latent_dim)
        self.pos = nn.Embedding(cfg.m_text, cfg.latent_dim)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.latent_dim, cfg.heads) for _ in range(self.N_LAYERS))
        self.ln = nn.LayerNorm(cfg.latent_dim)
        init_weights(self, self.N_LAYERS)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        """(batch, m_text) int ids -> (batch, m_text, latent_dim)."""
        x = self.embed(token_ids)
        x = x + self.pos.weight[None, : x.shape[1]]
        mask = padding_mask(token_ids == self.tokenizer.pad_id, x.dtype)
        for block in self.blocks:
            x = block(x, attn_mask=mask)
        return self.ln(x)

    def encode_captions(self, captions: list[str]) -> torch.Tensor:
        ids = self.tokenizer.encode_batch(captions)
        device = self.embed.weight.device
        return self.forward(ids.to(device))
