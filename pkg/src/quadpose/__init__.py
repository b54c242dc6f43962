"""Self-supervised quadruped pose estimation from unlabelled images.

Learns 2D and 3D poses jointly from unlabelled images plus an unpaired
prior of synthetic 2D poses, using a differentiable skeleton renderer,
an adversarial skeleton-image discriminator, and a rotation/projection
geometry-consistency cycle.
"""

__version__ = "0.1.0"

from .skeleton import (
    SkeletonTopology,
    Pose2D,
    Pose3D,
    RotationSpec,
    default_topology,
    normalize_pose2d,
    denormalize_pose2d,
    subset_pose,
    root_center,
    DEFAULT_SCENE_DEPTH,
)
from .estimator import SelfSupervisedPoseEstimator

__all__ = [
    "SkeletonTopology",
    "Pose2D",
    "Pose3D",
    "RotationSpec",
    "default_topology",
    "normalize_pose2d",
    "denormalize_pose2d",
    "subset_pose",
    "root_center",
    "DEFAULT_SCENE_DEPTH",
    "SelfSupervisedPoseEstimator",
    "__version__",
]
