import numpy as np
import pytest

from camtraj.geometry import (
    CameraPose,
    Intrinsics,
    Trajectory,
    UnitQuaternion,
    default_intrinsics,
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_quaternion(rng) -> UnitQuaternion:
    return UnitQuaternion.from_array(rng.normal(size=4))


def random_rotation_matrix(rng) -> np.ndarray:
    return random_quaternion(rng).to_matrix()


def make_pose(q=None, t=(0.0, 0.0, 0.0), intr: Intrinsics | None = None) -> CameraPose:
    return CameraPose(q or UnitQuaternion.identity(), t,
                      intr or default_intrinsics())


def random_pose(rng, scale: float = 1.0) -> CameraPose:
    return make_pose(random_quaternion(rng), rng.normal(size=3) * scale)


def random_trajectory(rng, n: int = 10, step: float = 0.1,
                      fps: float = 1.0) -> Trajectory:
    """Random-walk trajectory with bounded per-frame rotation (< 30 deg)."""
    intr = default_intrinsics()
    q = random_quaternion(rng)
    t = rng.normal(size=3)
    poses = [CameraPose(q, tuple(t), intr)]
    for _ in range(n - 1):
        q = q * UnitQuaternion.from_rotvec(rng.normal(size=3) * 0.1)
        t = t + rng.normal(size=3) * step
        poses.append(CameraPose(q, tuple(t), intr))
    return Trajectory(tuple(poses), fps)


def straight_trajectory(n: int, step, q=None, fps: float = 1.0) -> Trajectory:
    """Constant world-frame step, constant orientation."""
    step = np.asarray(step, dtype=float)
    q = q or UnitQuaternion.identity()
    intr = default_intrinsics()
    return Trajectory(tuple(
        CameraPose(q, tuple(i * step), intr) for i in range(n)), fps)
