"""camtraj: camera-trajectory engineering toolkit.

Preprocessing (cleaning / Kalman smoothing / resampling), motion tagging
and template captions, canonical normalization and integer tokenization of
pose sequences, a conditional auto-regressive generator, evaluation
metrics, a procedural dataset generator, and a CLI tying them together.
"""

__version__ = "0.1.0"

from .errors import CamtrajError, ParseError, ValidationError
from .geometry import (
    CameraPose,
    Intrinsics,
    Trajectory,
    UnitQuaternion,
    geodesic_angle,
    kinematics,
    quaternion_to_matrix,
    relative_pose,
    rotation_to_quaternion,
    slerp,
)
from .preprocess import (
    CleaningConfig,
    GrayFrame,
    KalmanConfig,
    brightness_score,
    clean_trajectory,
    kalman_smooth,
    resample_fixed,
    static_score,
)
from .tagging import (
    MotionTag,
    TagSegment,
    TagThresholds,
    caption_from_tags,
    parse_caption,
    segment_tags,
    smooth_tags,
    tag_frames,
)
from .tokenizer import (
    CanonicalTrajectory,
    CodecConfig,
    TokenSequence,
    canonicalize,
    decode_pose,
    decode_trajectory,
    encode_pose,
    encode_trajectory,
)

__all__ = [
    "CamtrajError",
    "CameraPose",
    "CanonicalTrajectory",
    "CleaningConfig",
    "CodecConfig",
    "GrayFrame",
    "Intrinsics",
    "KalmanConfig",
    "MotionTag",
    "ParseError",
    "TagSegment",
    "TagThresholds",
    "TokenSequence",
    "Trajectory",
    "UnitQuaternion",
    "ValidationError",
    "brightness_score",
    "canonicalize",
    "caption_from_tags",
    "clean_trajectory",
    "decode_pose",
    "decode_trajectory",
    "encode_pose",
    "encode_trajectory",
    "geodesic_angle",
    "kalman_smooth",
    "kinematics",
    "parse_caption",
    "quaternion_to_matrix",
    "relative_pose",
    "resample_fixed",
    "rotation_to_quaternion",
    "segment_tags",
    "slerp",
    "smooth_tags",
    "static_score",
    "tag_frames",
]
