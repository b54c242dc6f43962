"""Canonical joint schema, pose containers, and coordinate conventions.

All 2D coordinates live in [-1, 1]^2 with the y axis pointing down
(image convention). 3D poses store total depth z = d + DELTA where DELTA
is a fixed scene distance keeping every joint in front of the camera.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import OutOfRangeError, SchemaMismatchError

# Fixed scene distance (normalized units). The plane z = DELTA is the
# identity plane of the perspective projection.
DEFAULT_SCENE_DEPTH = 10.0

POSE_FILE_SCHEMA_VERSION = 1

# 20-joint quadruped schema: head (eyes, chin, neck), trunk (withers,
# back, tail base/tip) and 3 joints per limb. The 15-joint evaluation
# subset covers eyes, chin and the four limbs.
JOINT_NAMES = (
    "left_eye",
    "right_eye",
    "chin",
    "neck",
    "withers",
    "back",
    "tail_base",
    "tail_tip",
    "front_left_shoulder",
    "front_left_knee",
    "front_left_hoof",
    "front_right_shoulder",
    "front_right_knee",
    "front_right_hoof",
    "rear_left_hip",
    "rear_left_knee",
    "rear_left_hoof",
    "rear_right_hip",
    "rear_right_knee",
    "rear_right_hoof",
)

BONES = (
    (4, 3),  # withers -> neck
    (3, 2),  # neck -> chin
    (3, 0),  # neck -> left_eye
    (3, 1),  # neck -> right_eye
    (4, 5),  # withers -> back
    (5, 6),  # back -> tail_base
    (6, 7),  # tail_base -> tail_tip
    (4, 8),  # withers -> front_left_shoulder
    (8, 9),
    (9, 10),
    (4, 11),  # withers -> front_right_shoulder
    (11, 12),
    (12, 13),
    (5, 14),  # back -> rear_left_hip
    (14, 15),
    (15, 16),
    (5, 17),  # back -> rear_right_hip
    (17, 18),
    (18, 19),
)

EVAL_SUBSET = (0, 1, 2, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19)

ROOT_INDEX = 4  # withers


@dataclass(frozen=True)
class SkeletonTopology:
    """Joint names, bone tree, and the evaluation subset.

    The bone graph must be a tree rooted at ``root_index``; this is
    validated at construction.
    """

    joint_names: tuple[str, ...]
    bones: tuple[tuple[int, int], ...]
    eval_subset: tuple[int, ...]
    root_index: int

    def __post_init__(self):
        j = len(self.joint_names)
        if len(set(self.joint_names)) != j:
            raise SchemaMismatchError("duplicate joint names")
        for a, b in self.bones:
            if not (0 <= a < j and 0 <= b < j):
                raise SchemaMismatchError(f"bone ({a},{b}) outside [0,{j})")
        if not all(0 <= i < j for i in self.eval_subset):
            raise SchemaMismatchError("eval_subset index out of range")
        if len(set(self.eval_subset)) != len(self.eval_subset):
            raise SchemaMismatchError("eval_subset indices must be distinct")
        if not (0 <= self.root_index < j):
            raise SchemaMismatchError("root_index out of range")
        self._check_tree()

    def _check_tree(self):
        j = len(self.joint_names)
        if len(self.bones) != j - 1:
            raise SchemaMismatchError(
                f"tree over {j} joints needs {j - 1} bones, got {len(self.bones)}"
            )
        adj: dict[int, list[int]] = {i: [] for i in range(j)}
        for a, b in self.bones:
            adj[a].append(b)
            adj[b].append(a)
        seen = {self.root_index}
        stack = [self.root_index]
        while stack:
            node = stack.pop()
            for nxt in adj[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        if len(seen) != j:
            raise SchemaMismatchError("bone graph is not connected")

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    def joint_index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise SchemaMismatchError(f"unknown joint name: {name!r}")

    def parents(self) -> dict[int, int]:
        """child index -> parent index, following bone orientation."""
        return {b: a for a, b in self.bones}

    def content_hash(self) -> str:
        import hashlib

        blob = json.dumps(
            {
                "joint_names": list(self.joint_names),
                "bones": [list(b) for b in self.bones],
                "eval_subset": list(self.eval_subset),
                "root_index": self.root_index,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_dict(self) -> dict:
        return {
            "schema_version": POSE_FILE_SCHEMA_VERSION,
            "joint_names": list(self.joint_names),
            "bones": [list(b) for b in self.bones],
            "eval_subset": list(self.eval_subset),
            "root_index": self.root_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonTopology":
        if d.get("schema_version") != POSE_FILE_SCHEMA_VERSION:
            raise SchemaMismatchError(
                f"unknown topology schema version: {d.get('schema_version')!r}"
            )
        return cls(
            joint_names=tuple(d["joint_names"]),
            bones=tuple((int(a), int(b)) for a, b in d["bones"]),
            eval_subset=tuple(int(i) for i in d["eval_subset"]),
            root_index=int(d["root_index"]),
        )


def default_topology() -> SkeletonTopology:
    return SkeletonTopology(
        joint_names=JOINT_NAMES,
        bones=BONES,
        eval_subset=EVAL_SUBSET,
        root_index=ROOT_INDEX,
    )


def _validated(coords, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(coords, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise SchemaMismatchError(f"{name} expects (J, {dim}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise OutOfRangeError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class Pose2D:
    """J x 2 joint coordinates in normalized image coordinates."""

    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _validated(self.coords, 2, "Pose2D"))
        self.coords.setflags(write=False)

    @property
    def num_joints(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class Pose3D:
    """J x 3 joint coordinates; z stores total depth (d + DELTA), all > 0."""

    coords: np.ndarray

    def __post_init__(self):
        arr = _validated(self.coords, 3, "Pose3D")
        if np.any(arr[:, 2] <= 0.0):
            raise OutOfRangeError("Pose3D requires all depths > 0")
        object.__setattr__(self, "coords", arr)
        self.coords.setflags(write=False)

    @property
    def num_joints(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class RotationSpec:
    """Camera rotation as azimuth/elevation angles in radians."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        if not (-np.pi <= self.azimuth <= np.pi):
            raise OutOfRangeError(f"azimuth {self.azimuth} outside [-pi, pi]")


def normalize_pose2d(raw, image_size) -> Pose2D:
    """Map pixel coordinates to [-1, 1]^2.

    ``raw`` is (J, 2) in (x, y) pixel order; ``image_size`` is (H, W).
    """
    h, w = image_size
    arr = _validated(raw, 2, "raw pixel pose")
    if np.any(arr[:, 0] < 0) or np.any(arr[:, 0] >= w):
        raise OutOfRangeError("x pixel coordinate outside [0, W)")
    if np.any(arr[:, 1] < 0) or np.any(arr[:, 1] >= h):
        raise OutOfRangeError("y pixel coordinate outside [0, H)")
    out = np.empty_like(arr)
    out[:, 0] = 2.0 * arr[:, 0] / w - 1.0
    out[:, 1] = 2.0 * arr[:, 1] / h - 1.0
    return Pose2D(out)


def denormalize_pose2d(pose: Pose2D, image_size) -> np.ndarray:
    """Inverse of :func:`normalize_pose2d`; returns (J, 2) pixel coords."""
    h, w = image_size
    arr = pose.coords
    out = np.empty_like(arr)
    out[:, 0] = (arr[:, 0] + 1.0) * w / 2.0
    out[:, 1] = (arr[:, 1] + 1.0) * h / 2.0
    return out


def subset_pose(pose, topology: SkeletonTopology):
    """Gather the evaluation-subset joints, in eval order."""
    if pose.num_joints != topology.num_joints:
        raise SchemaMismatchError(
            f"pose has {pose.num_joints} joints, topology has {topology.num_joints}"
        )
    idx = list(topology.eval_subset)
    if isinstance(pose, Pose3D):
        return Pose3D(pose.coords[idx])
    return Pose2D(pose.coords[idx])


def root_center(pose: Pose3D, topology: SkeletonTopology,
                scene_depth: float = DEFAULT_SCENE_DEPTH) -> Pose3D:
    """Translate so the root joint sits at (0, 0, scene_depth)."""
    root = pose.coords[topology.root_index]
    offset = np.array([root[0], root[1], root[2] - scene_depth])
    return Pose3D(pose.coords - offset)


# ---------------------------------------------------------------------------
# Pose file I/O (self-describing JSON, shared with the synthetic-data module)

def pose_to_dict(pose, joint_names: Sequence[str]) -> dict:
    coords = pose.coords if hasattr(pose, "coords") else np.asarray(pose)
    if coords.shape[0] != len(joint_names):
        raise SchemaMismatchError("joint_names length does not match pose")
    return {
        "schema_version": POSE_FILE_SCHEMA_VERSION,
        "joint_names": list(joint_names),
        "coords": [[float(v) for v in row] for row in coords],
    }


def save_pose(path, pose, joint_names: Sequence[str]):
    with open(path, "w") as f:
        json.dump(pose_to_dict(pose, joint_names), f, indent=1)


def load_pose_dict(d: dict) -> tuple[list[str], np.ndarray]:
    if d.get("schema_version") != POSE_FILE_SCHEMA_VERSION:
        raise SchemaMismatchError(
            f"unknown pose schema version: {d.get('schema_version')!r}"
        )
    names = list(d["joint_names"])
    coords = np.asarray(d["coords"], dtype=np.float64)
    if coords.shape[0] != len(names):
        raise SchemaMismatchError("coords rows do not match joint_names")
    return names, coords


def load_pose(path) -> tuple[list[str], np.ndarray]:
    with open(path) as f:
        return load_pose_dict(json.load(f))


def remap_by_name(names: Sequence[str], coords: np.ndarray,
                  topology: SkeletonTopology) -> np.ndarray:
    """Reorder joint rows onto the canonical topology, keyed by name."""
    index = {n: i for i, n in enumerate(names)}
    missing = [n for n in topology.joint_names if n not in index]
    if missing:
        raise SchemaMismatchError(f"missing joints: {', '.join(missing)}")
    rows = [index[n] for n in topology.joint_names]
    return coords[rows]
