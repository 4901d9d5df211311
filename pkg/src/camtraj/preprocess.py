"""Trajectory extraction stack: outlier cleaning, Kalman smoothing,
fixed-length resampling, and frame-statistics shot filters.

Cleaning drops frames whose incoming speed exceeds alpha times the 95th
percentile of the speed distribution, then keeps only consecutive runs of
at least ``min_segment`` frames.  Smoothing runs an axis-independent 1-D
constant-velocity Kalman forward filter over camera positions (rotations
pass through untouched).  Resampling SLERPs rotations and lerps
translations onto a uniform parameter grid of the requested length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geometry import CameraPose, Trajectory, slerp

# Shot-filter defaults: a shot is "static" above this mean similarity and
# "too dark" below this mean intensity.
STATIC_SIMILARITY_THRESHOLD = 0.6
DARK_BRIGHTNESS_THRESHOLD = 15.0


@dataclass(frozen=True)
class CleaningConfig:
    alpha: float = 18.0            # outlier exclusion factor on the P95 speed
    percentile: float = 95.0
    min_segment: int = 5

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValidationError("alpha must be positive")
        if not (0 < self.percentile < 100):
            raise ValidationError("percentile must be in (0, 100)")
        if self.min_segment < 2:
            raise ValidationError("min_segment must be >= 2")


@dataclass(frozen=True)
class KalmanConfig:
    process_sigma: float = 0.5
    measurement_sigma: float = 1.0

    def __post_init__(self):
        if self.process_sigma <= 0 or self.measurement_sigma <= 0:
            raise ValidationError("noise standard deviations must be positive")


@dataclass(frozen=True)
class GrayFrame:
    """H x W array of 8-bit intensities."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValidationError(f"expected a non-empty HxW array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255):
                raise ValidationError("pixel values must fit 8 bits")
            arr = arr.astype(np.uint8)
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def clean_trajectory(
    traj: Trajectory, cfg: CleaningConfig = CleaningConfig()
) -> list[tuple[int, int]]:
    """Valid frame-index segments after speed-outlier removal.

    Returns disjoint, ordered (start, end) half-open index ranges, each at
    least ``min_segment`` frames long.  Empty list when nothing survives.
    """
    if len(traj) < 2:
        raise ValidationError("cleaning needs at least 2 poses")
    pos = traj.positions()
    speeds = np.linalg.norm(np.diff(pos, axis=0), axis=1) * traj.fps
    threshold = float(np.percentile(speeds, cfg.percentile)) * cfg.alpha

    # Frame i (i >= 1) is dropped when its incoming speed exceeds the
    # threshold; frame 0 has no incoming speed and is always kept.
    keep = np.ones(len(traj), dtype=bool)
    keep[1:] = speeds <= threshold

    segments: list[tuple[int, int]] = []
    start = None
    for i, ok in enumerate(keep):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            if i - start >= cfg.min_segment:
                segments.append((start, i))
            start = None
    if start is not None and len(traj) - start >= cfg.min_segment:
        segments.append((start, len(traj)))
    return segments


def kalman_smooth(positions, cfg: KalmanConfig = KalmanConfig()) -> np.ndarray:
    """Forward constant-velocity Kalman filter over 3-D positions.

    Axis-independent 1-D filters with state (position, velocity), unit time
    step, discrete white-acceleration process noise, and scalar position
    measurements.  Initial state is the first measurement with zero
    velocity and covariance 10 * sigma_m^2 * I.
    """
    z = np.asarray(positions, dtype=float)
    if z.ndim != 2 or z.shape[1] != 3 or z.shape[0] < 2:
        raise ValidationError(f"expected (n>=2, 3) positions, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValidationError("positions must be finite")

    q2 = cfg.process_sigma**2
    r = cfg.measurement_sigma**2
    F = np.array([[1.0, 1.0], [0.0, 1.0]])
    Q = q2 * np.array([[0.25, 0.5], [0.5, 1.0]])
    H = np.array([1.0, 0.0])

    n = z.shape[0]
    out = np.empty_like(z)
    out[0] = z[0]
    # One shared covariance: identical for all three axes.
    P = 10.0 * r * np.eye(2)
    x = np.stack([z[0], np.zeros(3)])  # rows: position, velocity; columns: axes
    for k in range(1, n):
        x = F @ x
        P = F @ P @ F.T + Q
        s = float(P[0, 0] + r)
        K = P[:, 0] / s
        resid = z[k] - x[0]
        x = x + np.outer(K, resid)
        P = P - np.outer(K, P[0, :])
        out[k] = x[0]
    return out


def resample_fixed(traj: Trajectory, target_len: int) -> Trajectory:
    """Resample onto exactly ``target_len`` poses.

    Rotations are SLERPed and translations linearly interpolated at uniform
    parameter values over the frame-index range; intrinsics are copied from
    the nearest source pose; the first and last poses are preserved exactly.
    fps is rescaled so the trajectory spans the same wall-clock time (i.e.
    per-second velocities and angular rates are unchanged).
    """
    if len(traj) < 2:
        raise ValidationError("resampling needs at least 2 poses")
    if target_len < 2:
        raise ValidationError("target_len must be >= 2")

    n_src = len(traj)
    fps = traj.fps * (target_len - 1) / (n_src - 1)
    poses: list[CameraPose] = []
    for j in range(target_len):
        u = j / (target_len - 1) * (n_src - 1)
        i0 = min(int(np.floor(u)), n_src - 2)
        frac = u - i0
        p0, p1 = traj.poses[i0], traj.poses[i0 + 1]
        if frac == 0.0:
            poses.append(p0)
            continue
        if frac == 1.0:
            poses.append(p1)
            continue
        q = slerp(p0.rotation, p1.rotation, frac)
        t0 = np.array(p0.translation)
        t1 = np.array(p1.translation)
        t = (1.0 - frac) * t0 + frac * t1
        intr = p0.intrinsics if frac < 0.5 else p1.intrinsics
        poses.append(CameraPose(q, tuple(t), intr))
    return Trajectory(tuple(poses), fps)


def _check_frames(frames: list[GrayFrame], minimum: int) -> None:
    if len(frames) < minimum:
        raise ValidationError(f"need at least {minimum} frames, got {len(frames)}")
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise ValidationError(f"frame dimensions differ: {sorted(shapes)}")


def static_score(frames: list[GrayFrame], tolerance: int = 0) -> float:
    """Mean pairwise-consecutive pixel similarity, in [0, 1].

    Per consecutive pair, similarity is the fraction of pixels whose
    absolute difference is <= tolerance (0 = strict equality).
    """
    _check_frames(frames, 2)
    sims = []
    for a, b in zip(frames, frames[1:]):
        diff = np.abs(a.pixels.astype(np.int16) - b.pixels.astype(np.int16))
        sims.append(float(np.mean(diff <= tolerance)))
    return float(np.mean(sims))


def brightness_score(frames: list[GrayFrame]) -> float:
    """Mean intensity over all pixels of all frames, in [0, 255]."""
    if len(frames) < 1:
        raise ValidationError("need at least 1 frame")
    total = sum(float(f.pixels.sum(dtype=np.float64)) for f in frames)
    count = sum(f.pixels.size for f in frames)
    return total / count
