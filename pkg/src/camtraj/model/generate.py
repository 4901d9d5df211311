"""Autoregressive sampling with structural masking.

Value positions only ever sample value tokens (BOS/PAD logits are
suppressed); EOS becomes available at decade boundaries after the first
complete pose and is forced once the sequence reaches its full value-token
budget, so every sample decodes without structural errors.
"""

from __future__ import annotations

import torch

from ..errors import ValidationError
from ..tokenizer import TOKENS_PER_POSE, TokenSequence
from .config import ModelConfig
from .decoder import ConditionalTrajectoryModel

SAMPLERS = ("greedy", "topk", "nucleus")


def _allowed_mask(cfg: ModelConfig, n_values: int, vocab: int) -> torch.Tensor:
    allowed = torch.zeros(vocab, dtype=torch.bool)
    if n_values < cfg.value_tokens:
        allowed[: cfg.bins + 1] = True
    if (n_values % TOKENS_PER_POSE == 0
            and TOKENS_PER_POSE <= n_values <= cfg.value_tokens):
        allowed[cfg.eos] = True
    return allowed


def _pick(logits: torch.Tensor, sampler: str, top_k: int, top_p: float,
          temperature: float, gen: torch.Generator) -> torch.Tensor:
    if sampler == "greedy":
        return logits.argmax(dim=-1)
    if temperature <= 0:
        raise ValidationError("temperature must be positive")
    logits = logits / temperature
    if sampler == "topk":
        kth = logits.topk(min(top_k, logits.shape[-1]), dim=-1).values[..., -1, None]
        logits = logits.masked_fill(logits < kth, float("-inf"))
    else:  # nucleus: smallest prefix of the sorted distribution reaching top_p
        sorted_logits, order = logits.sort(dim=-1, descending=True)
        probs = sorted_logits.softmax(dim=-1)
        before = probs.cumsum(dim=-1) - probs
        drop_sorted = before >= top_p          # top-1 has before == 0, always kept
        drop = torch.zeros_like(drop_sorted).scatter(-1, order, drop_sorted)
        logits = logits.masked_fill(drop, float("-inf"))
    probs = logits.softmax(dim=-1)
    return torch.multinomial(probs, 1, generator=gen).squeeze(-1)


def generate(model: ConditionalTrajectoryModel,
             latent: torch.Tensor,
             sampler: str = "nucleus",
             top_k: int = 50,
             top_p: float = 0.9,
             temperature: float = 1.0,
             seed: int = 0) -> list[TokenSequence]:
    """Sample one token sequence per batch entry of ``latent``.

    Runs the decoder incrementally from BOS; a sequence ends at a sampled
    EOS (only reachable at decade boundaries) or when the value-token
    budget is exhausted, at which point EOS is forced.
    """
    if sampler not in SAMPLERS:
        raise ValidationError(f"sampler must be one of {SAMPLERS}")
    cfg = model.cfg
    batch = latent.shape[0]
    gen = torch.Generator().manual_seed(seed)

    with torch.no_grad():
        caches = model.decoder.start_cache(latent)
        current = torch.full((batch,), cfg.bos, dtype=torch.long)
        values: list[list[int]] = [[] for _ in range(batch)]
        done = torch.zeros(batch, dtype=torch.bool)
        # At step p every live sequence has emitted exactly p value tokens.
        for position in range(cfg.value_tokens + 1):
            logits = model.decoder.step(caches, current, position)
            allowed = _allowed_mask(cfg, position, logits.shape[-1])
            masked = logits.masked_fill(~allowed[None, :], float("-inf"))
            picked = _pick(masked, sampler, top_k, top_p, temperature, gen)
            newly_done = (picked == cfg.eos) & ~done
            for i in torch.nonzero(~done & ~newly_done).flatten().tolist():
                values[i].append(int(picked[i]))
            done |= newly_done
            if bool(done.all()):
                break
            # finished sequences keep stepping on PAD; their output is fixed
            current = torch.where(done, torch.full_like(picked, cfg.pad), picked)

    return [TokenSequence(tuple([cfg.bos] + vals + [cfg.eos]), cfg.bins)
            for vals in values]
