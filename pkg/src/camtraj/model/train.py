"""Dataset preparation, the training loop, and checkpoint I/O.

Training is deterministic given the config seeds: model init is seeded,
the per-epoch shuffle uses a counter-based RNG, and all math runs on CPU
tensors.  The loss curve (epoch, mean_ce, reg_term) can be written as CSV.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import ValidationError
from ..synth import DatasetManifest
from ..tokenizer import CodecConfig, canonicalize, encode_trajectory
from .. import io as traj_io
from .config import ModelConfig, TrainConfig
from .decoder import ConditionalTrajectoryModel

CHECKPOINT_VERSION = 1


@dataclass
class PreparedDataset:
    tokens: torch.Tensor                  # (n, 10N + 2) long
    caption_ids: torch.Tensor             # (n, m_text) long
    captions: list[str]
    images: torch.Tensor | None = None    # (n, H, W, 3) float
    depths: torch.Tensor | None = None    # (n, H, W) float

    def __len__(self) -> int:
        return self.tokens.shape[0]


def prepare_dataset(manifest: DatasetManifest, cfg: ModelConfig,
                    modality: str = "text", split: str = "train",
                    max_invalid_fraction: float = 0.01) -> PreparedDataset:
    """Tokenize every record of a split; aborts when more than
    ``max_invalid_fraction`` of the records fail to encode."""
    from .text import CaptionTokenizer

    records = manifest.of_split(split)
    if not records:
        raise ValidationError(f"manifest has no {split!r} records")
    codec = CodecConfig(bins=cfg.bins, traj_len=cfg.traj_len)
    tokenizer = CaptionTokenizer(cfg.m_text)

    rows, caption_rows, captions = [], [], []
    images, depths = [], []
    failures: list[str] = []
    for rec in records:
        try:
            traj = traj_io.load_trajectory(manifest.resolve(rec.trajectory))
            ts = encode_trajectory(canonicalize(traj), codec)
            if modality == "rgbd":
                if not rec.image or not rec.depth:
                    raise ValidationError("record has no RGBD grids")
                img = traj_io.load_pgm(manifest.resolve(rec.image)).pixels / 255.0
                dep = traj_io.load_pgm(manifest.resolve(rec.depth)).pixels / 255.0
                images.append(np.repeat(img[:, :, None], 3, axis=2))
                depths.append(dep)
        except Exception as exc:
            failures.append(f"{rec.trajectory}: {exc}")
            continue
        rows.append(ts.ids)
        caption_rows.append(tokenizer.encode(rec.caption))
        captions.append(rec.caption)

    if failures and len(failures) > max_invalid_fraction * len(records):
        listing = "\n  ".join(failures[:20])
        raise ValidationError(
            f"{len(failures)}/{len(records)} records failed to encode:\n  {listing}")

    return PreparedDataset(
        tokens=torch.tensor(rows, dtype=torch.long),
        caption_ids=torch.tensor(caption_rows, dtype=torch.long),
        captions=captions,
        images=torch.tensor(np.array(images), dtype=torch.float32) if images else None,
        depths=torch.tensor(np.array(depths), dtype=torch.float32) if depths else None,
    )


@dataclass
class TrainResult:
    model: ConditionalTrajectoryModel
    loss_curve: list[tuple[int, float, float]]   # (epoch, mean_ce, reg_term)
    checkpoint_path: Path | None = None
    seconds: float = 0.0

    def write_loss_csv(self, path) -> None:
        lines = ["epoch,mean_ce,reg_term"]
        lines += [f"{e},{ce!r},{reg!r}" for e, ce, reg in self.loss_curve]
        Path(path).write_text("\n".join(lines) + "\n")


def _batch_latent(model: ConditionalTrajectoryModel, data: PreparedDataset,
                  idx: torch.Tensor) -> torch.Tensor:
    z_text = model.text_encoder(data.caption_ids[idx])
    if model.modality == "text":
        return z_text
    from .decoder import fuse_conditions
    from .vision import depth_to_grid

    z_img = model.image_encoder(data.images[idx])
    z_dep = model.depth_encoder(depth_to_grid(data.depths[idx]))
    return fuse_conditions(z_text, z_img, z_dep)


def train(dataset: PreparedDataset | DatasetManifest,
          cfg: ModelConfig,
          schedule: TrainConfig = TrainConfig(),
          modality: str = "text",
          checkpoint_path=None,
          resume_from=None,
          log=print) -> TrainResult:
    """Optimize a fresh (or resumed) model on the prepared dataset."""
    if schedule.threads > 0:
        torch.set_num_threads(schedule.threads)
    if isinstance(dataset, DatasetManifest):
        dataset = prepare_dataset(dataset, cfg, modality=modality)
    n = len(dataset)
    if n == 0:
        raise ValidationError("dataset is empty")

    start_epoch = 0
    loss_curve: list[tuple[int, float, float]] = []
    if resume_from is not None:
        bundle = load_checkpoint(resume_from)
        if bundle["model_config"] != cfg:
            raise ValidationError("checkpoint model config differs from the request")
        model = bundle["model"]
        start_epoch = bundle["epoch"] + 1
        loss_curve = list(bundle.get("loss_curve", []))
        opt = _make_optimizer(model, schedule)
        if bundle.get("optimizer_state") is not None:
            opt.load_state_dict(bundle["optimizer_state"])
    else:
        model = ConditionalTrajectoryModel(cfg, modality=modality)
        opt = _make_optimizer(model, schedule)

    t0 = time.time()
    for epoch in range(start_epoch, schedule.epochs):
        if schedule.shuffle:
            order = np.random.default_rng([schedule.seed, epoch]).permutation(n)
        else:
            order = np.arange(n)
        ce_sum = reg_sum = 0.0
        n_batches = 0
        for lo in range(0, n, schedule.batch_size):
            idx = torch.from_numpy(order[lo: lo + schedule.batch_size].copy())
            latent = _batch_latent(model, dataset, idx)
            breakdown = model.loss(latent, dataset.tokens[idx])
            opt.zero_grad()
            breakdown.total.backward()
            opt.step()
            ce_sum += breakdown.cross_entropy
            reg_sum += breakdown.regularizer
            n_batches += 1
        mean_ce = ce_sum / n_batches
        loss_curve.append((epoch, mean_ce, reg_sum / n_batches))
        if log is not None:
            log(f"epoch {epoch}: ce {mean_ce:.4f}")
        if (checkpoint_path is not None and schedule.checkpoint_every > 0
                and (epoch + 1) % schedule.checkpoint_every == 0):
            save_checkpoint(checkpoint_path, model, cfg, schedule, epoch,
                            loss_curve, optimizer=opt)
        if schedule.stop_at_ce > 0 and mean_ce <= schedule.stop_at_ce:
            break

    result = TrainResult(model, loss_curve, seconds=time.time() - t0)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, cfg, schedule,
                        loss_curve[-1][0] if loss_curve else 0,
                        loss_curve, optimizer=opt)
        result.checkpoint_path = Path(checkpoint_path)
    return result


def _make_optimizer(model, schedule: TrainConfig):
    return torch.optim.AdamW(
        model.parameters(), lr=schedule.lr,
        betas=(schedule.beta1, schedule.beta2),
        weight_decay=schedule.weight_decay)


def save_checkpoint(path, model: ConditionalTrajectoryModel, cfg: ModelConfig,
                    schedule: TrainConfig, epoch: int,
                    loss_curve=None, optimizer=None) -> None:
    """Self-describing container: version, configs, modality, tensors."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": cfg.to_dict(),
        "train_config": schedule.to_dict(),
        "modality": model.modality,
        "epoch": epoch,
        "loss_curve": loss_curve or [],
        "state_dict": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version!r}")
    cfg = ModelConfig.from_dict(payload["model_config"])
    model = ConditionalTrajectoryModel(cfg, modality=payload["modality"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return {
        "model": model,
        "model_config": cfg,
        "train_config": TrainConfig.from_dict(payload["train_config"]),
        "modality": payload["modality"],
        "epoch": payload["epoch"],
        "loss_curve": [tuple(row) for row in payload["loss_curve"]],
        "optimizer_state": payload["optimizer_state"],
    }
