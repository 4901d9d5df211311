"""Procedural generator of tagged, captioned trajectories.

Each trajectory is piecewise motion: per segment one translation
combination and one rotation action are drawn from a label pool and
integrated egocentrically (velocity along the current camera axes) with a
cosine ease-in-out ramp over 10% of the segment at each end.  The
generator's intended tags are the ground truth; captions come from the
template grammar.  Generation is deterministic per (config, seed), with
per-record seeds derived as (seed, index) so parallel builds match serial
ones byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geometry import CameraPose, Intrinsics, Trajectory, UnitQuaternion
from .preprocess import GrayFrame
from .tagging import MotionTag, TagSegment, caption_from_tags, segment_tags
from . import io as traj_io

_DIR_SIGN = {"left": -1.0, "right": 1.0, "up": -1.0, "down": 1.0,
             "forward": 1.0, "backward": -1.0, "static": 0.0}
_ROT_VEC = {
    "static": (0.0, 0.0, 0.0),
    "pitch_up": (1.0, 0.0, 0.0), "pitch_down": (-1.0, 0.0, 0.0),
    "yaw_right": (0.0, 1.0, 0.0), "yaw_left": (0.0, -1.0, 0.0),
    "roll_right": (0.0, 0.0, 1.0), "roll_left": (0.0, 0.0, -1.0),
}


def full_pool() -> list[MotionTag]:
    """All 27 x 7 motion labels."""
    from .tagging import TRANS_X, TRANS_Y, TRANS_Z, ROTATIONS

    return [MotionTag(x, y, z, r)
            for x in TRANS_X for y in TRANS_Y for z in TRANS_Z for r in ROTATIONS]


def moving_pool() -> list[MotionTag]:
    """The label space minus the fully static tag."""
    return [t for t in full_pool() if not t.is_static]


def single_action_pool() -> list[MotionTag]:
    """The 8 single-action labels: 6 translations plus pan left/right."""
    return [
        MotionTag(trans_x="right"), MotionTag(trans_x="left"),
        MotionTag(trans_y="up"), MotionTag(trans_y="down"),
        MotionTag(trans_z="forward"), MotionTag(trans_z="backward"),
        MotionTag(rotation="yaw_left"), MotionTag(rotation="yaw_right"),
    ]


@dataclass(frozen=True)
class SynthConfig:
    segments_min: int = 1
    segments_max: int = 3
    frames: int = 60                      # poses per trajectory
    speed_min: float = 0.02               # units / frame
    speed_max: float = 0.10
    turn_min: float = 0.025               # rad / frame
    turn_max: float = 0.050
    easing: bool = True
    label_pool: tuple[MotionTag, ...] = ()   # empty = the full moving pool
    caption_style: str = "sentence"
    image_size: int = 512
    rgbd: bool = False
    rgbd_size: int = 64                   # side of the procedural RGBD grids

    def __post_init__(self):
        if self.frames < 2:
            raise ValidationError("frames must be >= 2")
        if not (0 < self.segments_min <= self.segments_max):
            raise ValidationError("bad segment range")
        if not (0 < self.speed_min <= self.speed_max):
            raise ValidationError("bad speed range")
        if not (0 < self.turn_min <= self.turn_max):
            raise ValidationError("bad turn-rate range")

    def pool(self) -> list[MotionTag]:
        return list(self.label_pool) if self.label_pool else moving_pool()

    def hash(self) -> str:
        d = asdict(self)
        d["label_pool"] = [t.code() for t in self.label_pool]
        blob = json.dumps(d, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class SynthSample:
    trajectory: Trajectory
    segments: list[TagSegment]    # intended per-transition tags (ground truth)
    caption: str
    ramp_frames: list[int] = field(default_factory=list)


def _ease_weights(length: int, easing: bool) -> np.ndarray:
    """Per-transition velocity scaling, 1.0 on the plateau."""
    w = np.ones(length)
    if not easing or length < 3:
        return w
    ramp = max(1, round(0.1 * length))
    ramp = min(ramp, (length - 1) // 2)
    for k in range(ramp):
        f = 0.5 - 0.5 * math.cos(math.pi * (k + 1) / (ramp + 1))
        w[k] = f
        w[length - 1 - k] = f
    return w


def _split_lengths(total: int, n_parts: int, rng: np.random.Generator) -> list[int]:
    """Random partition of ``total`` with every part >= 8 frames (so tags
    survive smoothing); shorter trajectories collapse to one segment."""
    min_len = 8
    if total < 2 * min_len:
        return [total]
    n_parts = max(1, min(n_parts, total // min_len))
    props = rng.uniform(0.5, 1.5, size=n_parts)
    extra = rng.multinomial(total - min_len * n_parts, props / props.sum())
    return (min_len + extra).tolist()


def sample_trajectory(cfg: SynthConfig, seed) -> SynthSample:
    """One procedurally generated trajectory with ground-truth tags."""
    rng = np.random.default_rng(seed)
    pool = cfg.pool()
    n_transitions = cfg.frames - 1
    n_seg = int(rng.integers(cfg.segments_min, cfg.segments_max + 1))
    lengths = _split_lengths(n_transitions, n_seg, rng)

    focal = float(rng.uniform(0.4, 4.0)) * cfg.image_size / 2.0
    half = cfg.image_size / 2.0
    intr = Intrinsics(focal, focal, half, half, cfg.image_size, cfg.image_size)

    q = UnitQuaternion.identity()
    t = np.zeros(3)
    poses = [CameraPose(q, tuple(t), intr)]
    tags: list[MotionTag] = []
    ramp_frames: list[int] = []
    frame = 0
    for length in lengths:
        label = pool[int(rng.integers(len(pool)))]
        speed = float(rng.uniform(cfg.speed_min, cfg.speed_max))
        turn = float(rng.uniform(cfg.turn_min, cfg.turn_max))
        d = np.array([_DIR_SIGN[label.trans_x], _DIR_SIGN[label.trans_y],
                      _DIR_SIGN[label.trans_z]])
        norm = np.linalg.norm(d)
        if norm > 0:
            d = d / norm
        omega = turn * np.array(_ROT_VEC[label.rotation])
        weights = _ease_weights(length, cfg.easing)
        for k in range(length):
            w = weights[k]
            if w < 1.0:
                ramp_frames.append(frame)
            t = t + q.rotate(speed * w * d)
            q = q * UnitQuaternion.from_rotvec(omega * w)
            poses.append(CameraPose(q, tuple(t), intr))
            tags.append(label)
            frame += 1

    segments = segment_tags(tags)
    caption = caption_from_tags(segments, cfg.caption_style)
    return SynthSample(Trajectory(tuple(poses), fps=1.0), segments, caption,
                       ramp_frames)


def make_rgbd_grids(size: int, seed) -> tuple[GrayFrame, GrayFrame]:
    """Procedural gradient+noise image and depth grids (8-bit)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    base = (xx + yy) / (2 * (size - 1)) * 160.0
    img = np.clip(base + rng.normal(0, 20, size=(size, size)), 0, 255)
    depth = np.clip(255.0 * (yy / (size - 1)) * rng.uniform(0.5, 1.0), 0, 255)
    return GrayFrame(img.astype(np.uint8)), GrayFrame(depth.astype(np.uint8))


@dataclass
class DatasetRecord:
    trajectory: str                        # path relative to the manifest
    caption: str
    tags: list[dict]                       # segment records {start, end, tag}
    split: str
    image: str | None = None
    depth: str | None = None


@dataclass
class DatasetManifest:
    records: list[DatasetRecord]
    seed: int
    config_hash: str
    root: Path = Path(".")

    def of_split(self, split: str) -> list[DatasetRecord]:
        return [r for r in self.records if r.split == split]

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def save(self, path) -> None:
        path = Path(path)
        payload = {
            "format": traj_io.MANIFEST_FORMAT,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "records": [
                {"trajectory": r.trajectory, "caption": r.caption,
                 "tags": r.tags, "split": r.split,
                 "image": r.image, "depth": r.depth}
                for r in self.records
            ],
        }
        path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        from .errors import ParseError

        path = Path(path)
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from None
        if payload.get("format") != traj_io.MANIFEST_FORMAT:
            raise ParseError(f"{path}: missing or unsupported manifest format")
        records = []
        for i, r in enumerate(payload.get("records", [])):
            try:
                records.append(DatasetRecord(**r))
            except TypeError as exc:
                raise ParseError(f"{path}: records[{i}]: {exc}", offset=i) from None
        return cls(records, payload.get("seed", 0), payload.get("config_hash", ""),
                   root=path.parent)


def build_dataset(n: int, cfg: SynthConfig, seed: int, out_dir,
                  dedupe_captions: bool = False) -> DatasetManifest:
    """Generate n records under out_dir and write manifest.json.

    Split is 80/10/10 by a seeded shuffle; per-record seeds are (seed,
    index) so the corpus is byte-identical across rebuilds.  With
    ``dedupe_captions`` the generator skips draws whose caption was already
    used (handy for memorization probes where captions must disambiguate).
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    out_dir = Path(out_dir)
    (out_dir / "trajectories").mkdir(parents=True, exist_ok=True)
    if cfg.rgbd:
        (out_dir / "frames").mkdir(parents=True, exist_ok=True)

    samples: list[SynthSample] = []
    seen: set[str] = set()
    attempt = 0
    while len(samples) < n:
        sample = sample_trajectory(cfg, seed=[seed, attempt])
        attempt += 1
        if dedupe_captions:
            if sample.caption in seen:
                if attempt > 100 * n:
                    raise ValidationError(
                        "label pool too small to draw distinct captions")
                continue
            seen.add(sample.caption)
        samples.append(sample)

    order = np.random.default_rng(seed).permutation(n)
    n_train = int(0.8 * n)
    n_val = int(0.1 * n)
    split_of = {}
    for rank, idx in enumerate(order):
        split_of[int(idx)] = ("train" if rank < n_train
                              else "val" if rank < n_train + n_val else "test")

    records = []
    for i, sample in enumerate(samples):
        rel = f"trajectories/rec_{i:05d}.jsonl"
        traj_io.save_trajectory(sample.trajectory, out_dir / rel)
        image = depth = None
        if cfg.rgbd:
            img, dep = make_rgbd_grids(cfg.rgbd_size, seed=[seed, i, 1])
            image = f"frames/rec_{i:05d}_rgb.pgm"
            depth = f"frames/rec_{i:05d}_depth.pgm"
            traj_io.save_pgm(img, out_dir / image)
            traj_io.save_pgm(dep, out_dir / depth)
        records.append(DatasetRecord(
            trajectory=rel,
            caption=sample.caption,
            tags=[{"start": s.start, "end": s.end, "tag": s.tag.code()}
                  for s in sample.segments],
            split=split_of[i],
            image=image,
            depth=depth,
        ))

    manifest = DatasetManifest(records, seed, cfg.hash(), root=out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest
