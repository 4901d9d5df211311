"""Evaluation suite: motion-tag F1, trajectory featurization, a Fréchet
distance over feature sets, k-NN coverage, and an optional contrastive
text-trajectory score.

The feature space is a hand-crafted, rigid-invariant kinematic summary
(featurizer id ``kinematic-v1``); reports should always carry the metric
space id so numbers are never compared across spaces.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import torch
import torch.nn.functional as F
from scipy.spatial import cKDTree

from .errors import ValidationError
from .geometry import Trajectory, kinematics
from .tagging import (
    TagThresholds,
    ROTATIONS,
    tag_frames,
    segment_tags,
    smooth_tags,
)

FEATURIZER_ID = "kinematic-v1"
FEATURE_DIM = 32

ATOMIC_LABELS = ("left", "right", "up", "down", "forward", "backward",
                 "pitch_up", "pitch_down", "yaw_left", "yaw_right",
                 "roll_left", "roll_right")


@dataclass(frozen=True)
class TagF1Report:
    precision: float
    recall: float
    f1: float
    per_label: dict[str, dict[str, float]] = field(default_factory=dict)


def trajectory_label_set(traj: Trajectory,
                         th: TagThresholds = TagThresholds()) -> frozenset[str]:
    """Union of atomic labels over the smoothed tag segments."""
    tags = smooth_tags(tag_frames(traj, th), th.min_run)
    labels: set[str] = set()
    for seg in segment_tags(tags):
        labels |= seg.tag.atomic_labels()
    return frozenset(labels)


def tag_f1(generated: list[Trajectory],
           reference_tags: list[frozenset[str] | set[str]],
           th: TagThresholds = TagThresholds()) -> TagF1Report:
    """Micro-averaged multi-label precision/recall/F1 of generated motion
    labels against reference label sets."""
    if not generated or not reference_tags:
        raise ValidationError("generated and reference lists must be non-empty")
    if len(generated) != len(reference_tags):
        raise ValidationError(
            f"list lengths differ: {len(generated)} vs {len(reference_tags)}")
    tp = fp = fn = 0
    counts = {lab: {"tp": 0, "fp": 0, "fn": 0} for lab in ATOMIC_LABELS}
    for traj, ref in zip(generated, reference_tags):
        pred = trajectory_label_set(traj, th)
        ref = frozenset(ref)
        for lab in pred & ref:
            counts[lab]["tp"] += 1
        for lab in pred - ref:
            counts[lab]["fp"] += 1
        for lab in ref - pred:
            counts[lab]["fn"] += 1
        tp += len(pred & ref)
        fp += len(pred - ref)
        fn += len(ref - pred)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    per_label = {}
    for lab, c in counts.items():
        p = c["tp"] / (c["tp"] + c["fp"]) if c["tp"] + c["fp"] else 0.0
        r = c["tp"] / (c["tp"] + c["fn"]) if c["tp"] + c["fn"] else 0.0
        per_label[lab] = {
            "precision": p, "recall": r,
            "f1": 2 * p * r / (p + r) if p + r else 0.0,
        }
    return TagF1Report(precision, recall, f1, per_label)


@dataclass(frozen=True)
class FeatureSet:
    vectors: np.ndarray
    featurizer: str = FEATURIZER_ID

    def __post_init__(self):
        arr = np.asarray(self.vectors, dtype=float)
        if arr.ndim != 2:
            raise ValidationError(f"expected an (n, d) matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("feature vectors must be finite")
        object.__setattr__(self, "vectors", arr)

    def __len__(self) -> int:
        return self.vectors.shape[0]


# Fixed projection compressing the 34-bin tag histogram into the feature tail.
_TAG_PROJECTION = np.random.default_rng(0xC0FFEE).standard_normal((34, 10)) / np.sqrt(10)

_TRANS_COMBOS = [(x, y, z)
                 for x in ("left", "static", "right")
                 for y in ("up", "static", "down")
                 for z in ("forward", "static", "backward")]
_COMBO_INDEX = {c: i for i, c in enumerate(_TRANS_COMBOS)}
_ROT_INDEX = {r: i for i, r in enumerate(ROTATIONS)}


def featurize(traj: Trajectory, th: TagThresholds = TagThresholds()) -> np.ndarray:
    """Deterministic 32-d kinematic summary, invariant to global rigid
    transforms: per-axis velocity and angular-rate statistics, path length,
    egocentric net-displacement direction, and a projected histogram over
    the 34 atomic labels (27 translation combos + 7 rotation actions)."""
    if len(traj) < 2:
        raise ValidationError("featurize needs at least 2 poses")
    linear, angular = kinematics(traj)

    stats = []
    for block in (linear, angular):
        stats.extend([block.mean(axis=0), block.std(axis=0),
                      np.abs(block).max(axis=0)])
    stats = np.concatenate(stats)                       # 18 dims

    steps = np.diff(traj.positions(), axis=0)
    path_length = float(np.linalg.norm(steps, axis=1).sum())
    net_world = traj.positions()[-1] - traj.positions()[0]
    net_ego = traj.poses[0].rotation.conjugate().rotate(net_world)
    norm = np.linalg.norm(net_ego)
    net_dir = net_ego / norm if norm > 1e-12 else np.zeros(3)

    hist = np.zeros(34)
    for tag in tag_frames(traj, th):
        hist[_COMBO_INDEX[(tag.trans_x, tag.trans_y, tag.trans_z)]] += 1.0
        hist[27 + _ROT_INDEX[tag.rotation]] += 1.0
    hist /= len(traj) - 1

    return np.concatenate([stats, [path_length], net_dir, hist @ _TAG_PROJECTION])


def featurize_set(trajectories: list[Trajectory],
                  th: TagThresholds = TagThresholds()) -> FeatureSet:
    return FeatureSet(np.stack([featurize(t, th) for t in trajectories]))


def fid(a: FeatureSet, b: FeatureSet, shrinkage: float = 1e-6) -> float:
    """Fréchet distance between Gaussian fits of two feature sets:
    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))."""
    d = a.vectors.shape[1]
    for name, s in (("a", a), ("b", b)):
        if len(s) < d + 1:
            raise ValidationError(
                f"set {name} needs at least {d + 1} samples for a "
                f"non-degenerate covariance, got {len(s)}")
    mu_a, mu_b = a.vectors.mean(axis=0), b.vectors.mean(axis=0)
    cov_a = np.cov(a.vectors, rowvar=False) + shrinkage * np.eye(d)
    cov_b = np.cov(b.vectors, rowvar=False) + shrinkage * np.eye(d)
    covmean = scipy.linalg.sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    covmean = (covmean + covmean.T) / 2.0
    value = float(np.sum((mu_a - mu_b) ** 2)
                  + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(covmean))
    return max(value, 0.0)


def coverage(real: FeatureSet, gen: FeatureSet, k: int = 5) -> float:
    """Fraction of real points whose k-NN ball (radius = distance to the
    k-th nearest other real point) contains at least one generated point."""
    if len(real) < k + 1 or len(gen) < k + 1:
        raise ValidationError(f"both sets need at least {k + 1} points")
    real_tree = cKDTree(real.vectors)
    gen_tree = cKDTree(gen.vectors)
    # k+1 because each point is its own nearest neighbor at distance 0
    radii = real_tree.query(real.vectors, k=k + 1)[0][:, -1]
    nearest_gen = gen_tree.query(real.vectors, k=1)[0]
    return float(np.mean(nearest_gen <= radii))


# Optional contrastive text-trajectory score ----------------------------------

class ContrastiveHead:
    """Dual-encoder head aligning caption latents with trajectory features.

    Text side: mean-pooled text-encoder latents -> linear; trajectory side:
    feature vector -> 2-layer MLP; both L2-normalized into a shared space.
    """

    EMBED_DIM = 64

    def __init__(self, cfg=None):
        from .model.config import desk_config
        from .model.text import TextEncoder

        self.cfg = cfg or desk_config()
        torch.manual_seed(self.cfg.seed)
        self.text_encoder = TextEncoder(self.cfg)
        self.text_proj = torch.nn.Linear(self.cfg.latent_dim, self.EMBED_DIM)
        self.traj_proj = torch.nn.Sequential(
            torch.nn.Linear(FEATURE_DIM, 128), torch.nn.GELU(),
            torch.nn.Linear(128, self.EMBED_DIM))
        self.trained = False

    def parameters(self):
        yield from self.text_encoder.parameters()
        yield from self.text_proj.parameters()
        yield from self.traj_proj.parameters()

    def embed_text(self, captions: list[str]):
        z = self.text_encoder.encode_captions(captions).mean(dim=1)
        return F.normalize(self.text_proj(z), dim=-1)

    def embed_features(self, features: np.ndarray):
        x = torch.tensor(features, dtype=torch.float32)
        return F.normalize(self.traj_proj(x), dim=-1)

    def fit(self, captions: list[str], features: np.ndarray,
            epochs: int = 60, batch_size: int = 64, lr: float = 1e-3,
            temperature: float = 0.07, seed: int = 0, log=None) -> list[float]:
        """InfoNCE over in-batch negatives; returns the per-epoch losses."""
        if len(captions) != len(features):
            raise ValidationError("caption and feature counts differ")
        opt = torch.optim.AdamW(self.parameters(), lr=lr)
        losses = []
        n = len(captions)
        for epoch in range(epochs):
            order = np.random.default_rng([seed, epoch]).permutation(n)
            total = 0.0
            n_batches = 0
            for lo in range(0, n, batch_size):
                idx = order[lo: lo + batch_size]
                if len(idx) < 2:
                    continue
                e_text = self.embed_text([captions[i] for i in idx])
                e_traj = self.embed_features(features[idx])
                logits = e_text @ e_traj.T / temperature
                target = torch.arange(len(idx))
                loss = (F.cross_entropy(logits, target)
                        + F.cross_entropy(logits.T, target)) / 2.0
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.detach())
                n_batches += 1
            losses.append(total / max(n_batches, 1))
            if log is not None:
                log(f"contrastive epoch {epoch}: loss {losses[-1]:.4f}")
        self.trained = True
        return losses

    def save(self, path) -> None:
        torch.save({
            "format_version": 1,
            "model_config": self.cfg.to_dict(),
            "trained": self.trained,
            "text_encoder": self.text_encoder.state_dict(),
            "text_proj": self.text_proj.state_dict(),
            "traj_proj": self.traj_proj.state_dict(),
        }, path)

    @classmethod
    def load(cls, path) -> "ContrastiveHead":
        from .model.config import ModelConfig

        payload = torch.load(path, map_location="cpu", weights_only=False)
        head = cls(ModelConfig.from_dict(payload["model_config"]))
        head.text_encoder.load_state_dict(payload["text_encoder"])
        head.text_proj.load_state_dict(payload["text_proj"])
        head.traj_proj.load_state_dict(payload["traj_proj"])
        head.trained = payload["trained"]
        return head


def contrastive_score(captions: list[str], trajectories: list[Trajectory],
                      head: ContrastiveHead) -> float:
    """Mean cosine alignment of matched caption/trajectory pairs in the
    trained contrastive space."""
    if not head.trained:
        raise ValidationError(
            "contrastive head is untrained; fit it first (CLI: "
            "`camtraj train-contrastive --manifest ... --out head.pt`)")
    if len(captions) != len(trajectories):
        raise ValidationError("caption and trajectory counts differ")
    feats = np.stack([featurize(t) for t in trajectories])
    e_text = head.embed_text(captions).detach().numpy()
    e_traj = head.embed_features(feats).detach().numpy()
    norms_t = np.linalg.norm(e_text, axis=1)
    norms_j = np.linalg.norm(e_traj, axis=1)
    if np.any(norms_t < 1e-12) or np.any(norms_j < 1e-12):
        warnings.warn("degenerate embeddings; returning 0")
        return 0.0
    return float(np.mean(np.sum(e_text * e_traj, axis=1)))
