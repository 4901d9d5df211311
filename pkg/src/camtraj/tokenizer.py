"""Canonical normalization and the integer codec between trajectories and
discrete token sequences.

A trajectory is first re-expressed relative to its initial pose (rotation
R0^T Ri, translation R0^T (ti - t0)) and its translations divided by
(s + 1e-5) where s is the largest relativized translation norm.  Each pose
then becomes ten tokens: four quaternion components and three translation
components mapped from [-1, 1] to [0, 1], two focal ratios f/(10c), and the
log-compressed scale (log10(s') + 2) / 4 with s' clamped to [0.01, 100];
every value clamped to [0, 1] and binned as floor(p * B), so p = 1 lands on
token B and the value vocabulary has B + 1 entries.  BOS/EOS/PAD occupy ids
B+1/B+2/B+3.  Decoding dequantizes at bin centers, min((token + 0.5) / B, 1).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError
from .geometry import CameraPose, Intrinsics, Trajectory, UnitQuaternion

CANONICAL_EPSILON = 1e-5
SCALE_MIN = 0.01
SCALE_MAX = 100.0
TOKENS_PER_POSE = 10


class ScaleConsistencyWarning(UserWarning):
    """Per-pose scale tokens disagree by more than one bin."""


@dataclass(frozen=True)
class CodecConfig:
    bins: int = 256
    traj_len: int = 60

    def __post_init__(self):
        if self.bins < 2:
            raise ValidationError("bins must be >= 2")
        if self.traj_len < 2:
            raise ValidationError("traj_len must be >= 2")

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
    def vocab_size(self) -> int:
        return self.bins + 4


@dataclass(frozen=True)
class TokenSequence:
    """Integer token ids: BOS, a multiple of 10 value tokens, EOS, PAD*."""

    ids: tuple[int, ...]
    bins: int

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        cfg = CodecConfig(bins=self.bins)
        ids = self.ids
        if not ids or ids[0] != cfg.bos:
            raise ParseError("token sequence must start with BOS", offset=0)
        if any(i < 0 or i >= cfg.vocab_size for i in ids):
            bad = next(k for k, i in enumerate(ids) if i < 0 or i >= cfg.vocab_size)
            raise ParseError(f"token id {ids[bad]} outside vocabulary", offset=bad)
        try:
            eos_at = ids.index(cfg.eos)
        except ValueError:
            raise ParseError("token sequence has no EOS", offset=len(ids) - 1) from None
        payload = ids[1:eos_at]
        if any(i > self.bins for i in payload):
            bad = 1 + next(k for k, i in enumerate(payload) if i > self.bins)
            raise ParseError("auxiliary token inside the value payload", offset=bad)
        if len(payload) % TOKENS_PER_POSE != 0:
            raise ParseError(
                f"value payload length {len(payload)} is not a multiple of "
                f"{TOKENS_PER_POSE}", offset=eos_at)
        if any(i != cfg.pad for i in ids[eos_at + 1:]):
            bad = eos_at + 1 + next(
                k for k, i in enumerate(ids[eos_at + 1:]) if i != cfg.pad)
            raise ParseError("only PAD may follow EOS", offset=bad)

    def payload(self) -> tuple[int, ...]:
        cfg = CodecConfig(bins=self.bins)
        return self.ids[1:self.ids.index(cfg.eos)]

    def num_poses(self) -> int:
        return len(self.payload()) // TOKENS_PER_POSE

    def to_line(self) -> str:
        """Space-separated ids, PAD stripped (one trajectory per line)."""
        cfg = CodecConfig(bins=self.bins)
        return " ".join(str(i) for i in self.ids[: self.ids.index(cfg.eos) + 1])

    @classmethod
    def from_line(cls, line: str, bins: int) -> "TokenSequence":
        try:
            ids = tuple(int(tok) for tok in line.split())
        except ValueError as exc:
            raise ParseError(f"non-integer token: {exc}") from None
        return cls(ids, bins)


@dataclass(frozen=True)
class CanonicalTrajectory:
    """Trajectory re-based on its first pose, translations in the unit ball.

    ``scale`` is the pre-division max translation norm in world units
    (0 for a fully static trajectory).
    """

    poses: Trajectory
    scale: float
    epsilon: float = CANONICAL_EPSILON

    def __len__(self) -> int:
        return len(self.poses)


def canonicalize(traj: Trajectory) -> CanonicalTrajectory:
    """Rigid-invariant, scale-normalized form of a trajectory.

    The first pose maps to identity/origin exactly; subsequent rotations
    become R0^T Ri and translations R0^T (ti - t0) / (s + epsilon) with
    s the max relativized translation norm (so component magnitudes never
    exceed 1).
    """
    q0 = traj.poses[0].rotation
    t0 = np.array(traj.poses[0].translation)
    q0_inv = q0.conjugate()

    rel_q = [UnitQuaternion.identity()]
    rel_t = [np.zeros(3)]
    for p in traj.poses[1:]:
        rel_q.append(q0_inv * p.rotation)
        rel_t.append(q0_inv.rotate(np.array(p.translation) - t0))

    scale = max((float(np.linalg.norm(t)) for t in rel_t[1:]), default=0.0)
    denom = scale + CANONICAL_EPSILON
    poses = [
        CameraPose(q, tuple(t / denom), src.intrinsics)
        for q, t, src in zip(rel_q, rel_t, traj.poses)
    ]
    # Force the base pose to be exactly identity/origin.
    poses[0] = CameraPose(UnitQuaternion.identity(), (0.0, 0.0, 0.0),
                          traj.poses[0].intrinsics)
    return CanonicalTrajectory(Trajectory(tuple(poses), traj.fps), scale)


def _quantize(p: float, bins: int) -> int:
    p = min(1.0, max(0.0, p))
    return min(int(math.floor(p * bins)), bins)


def _dequantize(token: int, bins: int) -> float:
    return min((token + 0.5) / bins, 1.0)


def scale_to_unit(scale: float) -> float:
    """Log-compress a world-unit scale into [0, 1]."""
    s = min(SCALE_MAX, max(SCALE_MIN, scale))
    return (math.log10(s) + 2.0) / 4.0


def unit_to_scale(p: float) -> float:
    return 10.0 ** (4.0 * p - 2.0)


def encode_pose(pose: CameraPose, scale: float, bins: int) -> tuple[int, ...]:
    """Ten tokens for one canonical pose: (r1..r4, t1..t3, f1, f2, s)."""
    if not math.isfinite(scale):
        raise ValidationError(f"scale must be finite, got {scale}")
    q = pose.rotation
    t = pose.translation
    intr = pose.intrinsics
    values = (
        (q.w + 1.0) / 2.0,
        (q.x + 1.0) / 2.0,
        (q.y + 1.0) / 2.0,
        (q.z + 1.0) / 2.0,
        (t[0] + 1.0) / 2.0,
        (t[1] + 1.0) / 2.0,
        (t[2] + 1.0) / 2.0,
        intr.fx / (10.0 * intr.cx),
        intr.fy / (10.0 * intr.cy),
        scale_to_unit(scale),
    )
    if not all(math.isfinite(v) for v in values):
        raise ValidationError("non-finite pose parameters")
    return tuple(_quantize(v, bins) for v in values)


@dataclass(frozen=True)
class DecodedPose:
    """Normalized pose parameters recovered from one token decade."""

    rotation: UnitQuaternion
    translation: np.ndarray          # canonical (unit-ball) coordinates
    focal_ratio_x: float             # fx = focal_ratio_x * 10 * cx
    focal_ratio_y: float
    scale: float                     # s' in world units


def decode_pose(tokens, bins: int) -> DecodedPose:
    """Invert encode_pose at bin centers; quaternion renormalized, w >= 0."""
    toks = tuple(int(t) for t in tokens)
    if len(toks) != TOKENS_PER_POSE:
        raise ValidationError(f"expected {TOKENS_PER_POSE} tokens, got {len(toks)}")
    if any(t < 0 or t > bins for t in toks):
        raise ValidationError(f"token outside [0, {bins}]: {toks}")
    p = [_dequantize(t, bins) for t in toks]
    q_raw = [2.0 * v - 1.0 for v in p[0:4]]
    if math.sqrt(sum(v * v for v in q_raw)) < 1e-12:
        # All-zero quaternion is only reachable at odd bin counts; decode
        # deterministically to the identity rotation.
        quat = UnitQuaternion.identity()
    else:
        quat = UnitQuaternion(*q_raw)
    translation = np.array([2.0 * v - 1.0 for v in p[4:7]])
    return DecodedPose(
        rotation=quat,
        translation=translation,
        focal_ratio_x=p[7],
        focal_ratio_y=p[8],
        scale=unit_to_scale(p[9]),
    )


def encode_trajectory(ct: CanonicalTrajectory, cfg: CodecConfig) -> TokenSequence:
    """BOS + 10 tokens per pose + EOS (the global scale and the per-pose
    focals are repeated inside every decade)."""
    if len(ct) != cfg.traj_len:
        raise ValidationError(
            f"trajectory has {len(ct)} poses, codec expects {cfg.traj_len} "
            f"(resample upstream)")
    ids = [cfg.bos]
    for pose in ct.poses.poses:
        ids.extend(encode_pose(pose, ct.scale, cfg.bins))
    ids.append(cfg.eos)
    return TokenSequence(tuple(ids), cfg.bins)


def decode_trajectory(
    ts: TokenSequence,
    cfg: CodecConfig,
    image_size: tuple[int, int] = (512, 512),
    fps: float = 1.0,
) -> Trajectory:
    """Decode a token sequence back into a world-unit trajectory.

    The de-normalizing scale is the median of the per-pose decoded scales;
    a ScaleConsistencyWarning is emitted when any per-pose scale token
    deviates from the median token by more than one bin.  The first pose is
    forced to identity/origin.
    """
    if ts.bins != cfg.bins:
        raise ValidationError(f"sequence bins {ts.bins} != codec bins {cfg.bins}")
    payload = ts.payload()
    if not payload:
        raise ParseError("empty trajectory (no pose tokens)", offset=1)
    decades = [payload[i:i + TOKENS_PER_POSE]
               for i in range(0, len(payload), TOKENS_PER_POSE)]
    decoded = [decode_pose(d, cfg.bins) for d in decades]

    s_tokens = np.array([d[9] for d in decades])
    median_token = float(np.median(s_tokens))
    if np.any(np.abs(s_tokens - median_token) > 1.0):
        warnings.warn(
            f"scale tokens deviate from the median by more than one bin "
            f"(median {median_token}, range [{s_tokens.min()}, {s_tokens.max()}])",
            ScaleConsistencyWarning,
            stacklevel=2,
        )
    scale = float(np.median([d.scale for d in decoded]))

    width, height = image_size
    cx, cy = width / 2.0, height / 2.0
    poses = []
    for i, d in enumerate(decoded):
        intr = Intrinsics(
            fx=d.focal_ratio_x * 10.0 * cx,
            fy=d.focal_ratio_y * 10.0 * cy,
            cx=cx, cy=cy, width=width, height=height,
        )
        if i == 0:
            poses.append(CameraPose(UnitQuaternion.identity(), (0.0, 0.0, 0.0), intr))
        else:
            t = d.translation * (scale + CANONICAL_EPSILON)
            poses.append(CameraPose(d.rotation, tuple(t), intr))
    return Trajectory(tuple(poses), fps)
