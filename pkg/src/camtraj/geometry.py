"""Quaternion / SE(3) primitives, interpolation and kinematic derivatives.

Conventions used throughout the toolkit:

* Poses are camera-to-world: ``R`` maps camera-frame vectors into world
  coordinates, ``t`` is the camera position in world coordinates.
* Camera frame axes: +x = right, +y = down, +z = forward (pinhole).
* Quaternions are ``(w, x, y, z)``, always unit norm with ``w >= 0``
  (hemisphere-canonical, so ``q`` and ``-q`` collapse to one value).
* Angular rates are the components of the rotation log-map of the
  frame-to-frame relative rotation, expressed in the camera frame and
  scaled by fps.  Signs: +pitch = tilt up, +yaw = turn right,
  +roll = roll right (clockwise seen from behind the camera).

All types are immutable values; every function here is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

Vec3 = tuple[float, float, float]

# Below this angle slerp falls back to normalized linear interpolation.
_SLERP_LERP_ANGLE = 1e-6


def _as_vec3(v) -> Vec3:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValidationError(f"expected a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("vector components must be finite")
    return (float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics: focal lengths and principal point, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 512
    height: int = 512

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValidationError("principal point must lie inside the image")


@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion (w, x, y, z), sign-normalized so that w >= 0."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if not math.isfinite(n) or n < 1e-12:
            raise ValidationError("quaternion must be finite and non-zero")
        s = 1.0 / n
        if self.w < 0:
            s = -s
        object.__setattr__(self, "w", self.w * s)
        object.__setattr__(self, "x", self.x * s)
        object.__setattr__(self, "y", self.y * s)
        object.__setattr__(self, "z", self.z * s)

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, wxyz) -> "UnitQuaternion":
        w, x, y, z = (float(v) for v in np.asarray(wxyz, dtype=float).reshape(4))
        return cls(w, x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    # Inverse of a unit quaternion is its conjugate.
    inverse = conjugate

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return UnitQuaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def rotate(self, v) -> np.ndarray:
        """Rotate a 3-vector by this quaternion."""
        vx, vy, vz = _as_vec3(v)
        # v' = v + 2*q_vec x (q_vec x v + w*v)
        qv = np.array([self.x, self.y, self.z])
        vv = np.array([vx, vy, vz])
        t = 2.0 * np.cross(qv, vv)
        return vv + self.w * t + np.cross(qv, t)

    def to_matrix(self) -> np.ndarray:
        return quaternion_to_matrix(self)

    def to_rotvec(self) -> np.ndarray:
        """Rotation vector (axis * angle), angle in [0, pi]."""
        vn = math.sqrt(self.x**2 + self.y**2 + self.z**2)
        if vn < 1e-12:
            return 2.0 * np.array([self.x, self.y, self.z])
        angle = 2.0 * math.atan2(vn, self.w)
        return (angle / vn) * np.array([self.x, self.y, self.z])

    @classmethod
    def from_rotvec(cls, rv) -> "UnitQuaternion":
        rx, ry, rz = _as_vec3(rv)
        angle = math.sqrt(rx * rx + ry * ry + rz * rz)
        if angle < 1e-12:
            return cls(1.0, 0.5 * rx, 0.5 * ry, 0.5 * rz)
        s = math.sin(0.5 * angle) / angle
        return cls(math.cos(0.5 * angle), rx * s, ry * s, rz * s)


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rigid placement plus intrinsics."""

    rotation: UnitQuaternion
    translation: Vec3
    intrinsics: Intrinsics

    def __post_init__(self):
        object.__setattr__(self, "translation", _as_vec3(self.translation))

    @classmethod
    def identity(cls, intrinsics: Intrinsics | None = None) -> "CameraPose":
        return cls(
            UnitQuaternion.identity(),
            (0.0, 0.0, 0.0),
            intrinsics or default_intrinsics(),
        )


def default_intrinsics(width: int = 512, height: int = 512) -> Intrinsics:
    """fx = fy = width, principal point at the image center."""
    return Intrinsics(float(width), float(width), width / 2.0, height / 2.0, width, height)


@dataclass(frozen=True)
class Trajectory:
    """Ordered sequence of camera poses sampled at a fixed frame rate."""

    poses: tuple[CameraPose, ...]
    fps: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(self.poses) == 0:
            raise ValidationError("trajectory needs at least one pose")
        if self.fps <= 0:
            raise ValidationError("fps must be positive")
        dims = {(p.intrinsics.width, p.intrinsics.height) for p in self.poses}
        if len(dims) > 1:
            raise ValidationError(f"poses disagree on image dimensions: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses])

    def quaternions(self) -> np.ndarray:
        return np.array([p.rotation.as_array() for p in self.poses])


def rotation_to_quaternion(m) -> UnitQuaternion:
    """Convert an orthonormal 3x3 rotation matrix to a unit quaternion.

    Raises ValidationError (reporting the largest deviation) when the input
    is not orthonormal with determinant +1 within 1e-6.
    """
    mat = np.asarray(m, dtype=float)
    if mat.shape != (3, 3):
        raise ValidationError(f"expected a 3x3 matrix, got shape {mat.shape}")
    dev = float(np.abs(mat.T @ mat - np.eye(3)).max())
    if dev > 1e-6:
        raise ValidationError(f"matrix is not orthonormal: max deviation {dev:.3e}")
    if np.linalg.det(mat) < 0:
        raise ValidationError("matrix has determinant -1 (improper rotation)")

    # Shepperd's method: pick the numerically largest component.
    tr = mat[0, 0] + mat[1, 1] + mat[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (mat[2, 1] - mat[1, 2]) / s
        y = (mat[0, 2] - mat[2, 0]) / s
        z = (mat[1, 0] - mat[0, 1]) / s
    elif mat[0, 0] > mat[1, 1] and mat[0, 0] > mat[2, 2]:
        s = math.sqrt(1.0 + mat[0, 0] - mat[1, 1] - mat[2, 2]) * 2.0
        w = (mat[2, 1] - mat[1, 2]) / s
        x = 0.25 * s
        y = (mat[0, 1] + mat[1, 0]) / s
        z = (mat[0, 2] + mat[2, 0]) / s
    elif mat[1, 1] > mat[2, 2]:
        s = math.sqrt(1.0 + mat[1, 1] - mat[0, 0] - mat[2, 2]) * 2.0
        w = (mat[0, 2] - mat[2, 0]) / s
        x = (mat[0, 1] + mat[1, 0]) / s
        y = 0.25 * s
        z = (mat[1, 2] + mat[2, 1]) / s
    else:
        s = math.sqrt(1.0 + mat[2, 2] - mat[0, 0] - mat[1, 1]) * 2.0
        w = (mat[1, 0] - mat[0, 1]) / s
        x = (mat[0, 2] + mat[2, 0]) / s
        y = (mat[1, 2] + mat[2, 1]) / s
        z = 0.25 * s
    return UnitQuaternion(w, x, y, z)


def quaternion_to_matrix(q: UnitQuaternion) -> np.ndarray:
    """Inverse of rotation_to_quaternion."""
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def geodesic_angle(q0: UnitQuaternion, q1: UnitQuaternion) -> float:
    """Rotation angle between two orientations, in [0, pi].

    Zero iff q0 == +/-q1 (double cover collapsed).  Uses the atan2 form,
    which stays accurate near zero where acos of the dot product would
    saturate around sqrt(machine epsilon).
    """
    if q0 == q1:
        return 0.0
    rel = q0.conjugate() * q1
    return 2.0 * math.atan2(math.sqrt(rel.x**2 + rel.y**2 + rel.z**2), abs(rel.w))

def slerp(q0: UnitQuaternion, q1: UnitQuaternion, u: float) -> UnitQuaternion:
    """Constant-angular-velocity interpolation along the shortest arc.

    u must be in [0, 1].  Near-parallel endpoints (< 1e-6 rad apart) fall
    back to normalized linear interpolation.
    """
    if not (0.0 <= u <= 1.0):
        raise ValidationError(f"interpolation fraction must be in [0, 1], got {u}")
    if u == 0.0:
        return q0
    if u == 1.0:
        return q1
    a0 = q0.as_array()
    a1 = q1.as_array()
    dot = float(a0 @ a1)
    if dot < 0:  # shortest arc
        a1 = -a1
        dot = -dot
    dot = min(1.0, dot)
    theta = math.acos(dot)
    if theta < _SLERP_LERP_ANGLE:
        return UnitQuaternion.from_array((1.0 - u) * a0 + u * a1)
    s = math.sin(theta)
    return UnitQuaternion.from_array(
        (math.sin((1.0 - u) * theta) / s) * a0 + (math.sin(u * theta) / s) * a1
    )


def relative_pose(a: CameraPose, b: CameraPose) -> tuple[UnitQuaternion, np.ndarray]:
    """Pose of b expressed in a's camera frame.

    Composing a with the result reproduces b: R_b = R_a R_rel,
    t_b = R_a t_rel + t_a.  Equal rotations give an exact identity.
    """
    if a.rotation == b.rotation:
        q_rel = UnitQuaternion.identity()
    else:
        q_rel = a.rotation.conjugate() * b.rotation
    dt = np.array(b.translation) - np.array(a.translation)
    t_rel = a.rotation.conjugate().rotate(dt)
    return q_rel, t_rel


def kinematics(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame egocentric linear velocity and axis-resolved angular rates.

    Returns (linear, angular), each of shape (len(traj) - 1, 3):

    * linear[i]  = R_i^T (t_{i+1} - t_i) * fps, in units/s in frame i's
      camera axes (x right, y down, z forward).
    * angular[i] = log(R_i^T R_{i+1}) * fps, in rad/s; columns are
      (pitch, yaw, roll) rates with the sign conventions in the module
      docstring.
    """
    if len(traj) < 2:
        raise ValidationError("kinematics needs at least 2 poses")
    n = len(traj)
    linear = np.empty((n - 1, 3))
    angular = np.empty((n - 1, 3))
    for i in range(n - 1):
        p0, p1 = traj.poses[i], traj.poses[i + 1]
        q_rel, _ = relative_pose(p0, p1)
        dt_world = np.array(p1.translation) - np.array(p0.translation)
        linear[i] = p0.rotation.conjugate().rotate(dt_world) * traj.fps
        angular[i] = q_rel.to_rotvec() * traj.fps
    return linear, angular


def apply_rigid_transform(
    traj: Trajectory, rotation: UnitQuaternion, translation
) -> Trajectory:
    """Pre-multiply every pose by one global rigid transform."""
    t_g = np.array(_as_vec3(translation))
    poses = []
    for p in traj.poses:
        q = rotation * p.rotation
        t = rotation.rotate(p.translation) + t_g
        poses.append(CameraPose(q, tuple(t), p.intrinsics))
    return Trajectory(tuple(poses), traj.fps)
