"""Toolkit for relative camera-motion benchmarks.

Builds labeled image-pair samples from posed RGB-D sequences, solves the
relative pose geometrically from point correspondences as a baseline, and
scores predictions, with a synthetic ground-truth rig for verification.
"""

from .geometry import (
    Intrinsics,
    Pose,
    PoseVector,
    euler_from_rotation,
    pose_vector,
    relative_pose,
    rotation_from_euler,
)
from .frames import Frame, SequenceManifest, load_manifest
from .curation import (
    BenchConfig,
    DiagConfig,
    DiagThresholds,
    PairSample,
    curate_bench,
    curate_diag,
    swap_sample,
)
from .solver import Correspondence, RansacConfig, classify_pair, estimate_relative_motion
from .evalkit import PredictionSet, consistency_rate, evaluate_run, macro_f1

__version__ = "0.1.0"

__all__ = [
    "Intrinsics",
    "Pose",
    "PoseVector",
    "euler_from_rotation",
    "pose_vector",
    "relative_pose",
    "rotation_from_euler",
    "Frame",
    "SequenceManifest",
    "load_manifest",
    "BenchConfig",
    "DiagConfig",
    "DiagThresholds",
    "PairSample",
    "curate_bench",
    "curate_diag",
    "swap_sample",
    "Correspondence",
    "RansacConfig",
    "classify_pair",
    "estimate_relative_motion",
    "PredictionSet",
    "consistency_rate",
    "evaluate_run",
    "macro_f1",
    "__version__",
]
