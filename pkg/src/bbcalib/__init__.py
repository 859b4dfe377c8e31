"""Blackbox 3D-3D calibration for optical see-through head-mounted displays."""

from .errors import (
    AmbiguousAverage,
    CalibrationError,
    DegenerateConfiguration,
    DegenerateMotion,
    NearInfinityPoint,
    NoConsensus,
    PacketError,
    RankDeficient,
    TooFewPoints,
)
from .estimators import (
    ModelClass,
    RansacConfig,
    Transform,
    estimate,
    estimate_affine,
    estimate_isometric,
    estimate_perspective,
    matrix_distance,
    pivot_calibration,
    ransac_estimate,
)
from .geometry import RigidTransform, UnitQuaternion, apply, compose, invert_rigid
from .metrics import ErrorStats, average_quaternion, pose_error, reprojection_error
from .pipeline import run_calibrate_and_test, run_double_cube_match, run_multipoint_workflow
from .simulator import (
    CalibrationSession,
    NoiseModel,
    PointCorrespondence,
    generate_multipoint_session,
    generate_single_point_session,
    generate_world_anchored_session,
    make_ground_truth,
)

__version__ = "0.1.0"

__all__ = [
    "AmbiguousAverage",
    "CalibrationError",
    "CalibrationSession",
    "DegenerateConfiguration",
    "DegenerateMotion",
    "ErrorStats",
    "ModelClass",
    "NearInfinityPoint",
    "NoConsensus",
    "NoiseModel",
    "PacketError",
    "PointCorrespondence",
    "RankDeficient",
    "RansacConfig",
    "RigidTransform",
    "TooFewPoints",
    "Transform",
    "UnitQuaternion",
    "apply",
    "average_quaternion",
    "compose",
    "estimate",
    "estimate_affine",
    "estimate_isometric",
    "estimate_perspective",
    "generate_multipoint_session",
    "generate_single_point_session",
    "generate_world_anchored_session",
    "invert_rigid",
    "make_ground_truth",
    "matrix_distance",
    "pivot_calibration",
    "pose_error",
    "ransac_estimate",
    "reprojection_error",
    "run_calibrate_and_test",
    "run_double_cube_match",
    "run_multipoint_workflow",
]
