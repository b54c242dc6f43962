"""Procedural quadruped generator: unpaired 2D pose prior and eval scenes.

A small forward-kinematics model over the canonical 20-joint topology
stands in for an external CAD-derived pose set. Limbs articulate in the
sagittal plane with a sinusoidal gait; the head, neck and tail get
uniform angle jitter within anatomical ranges.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import geometry, renderer
from .errors import ConfigurationError, SchemaMismatchError
from .skeleton import (
    DEFAULT_SCENE_DEPTH,
    POSE_FILE_SCHEMA_VERSION,
    Pose2D,
    Pose3D,
    RotationSpec,
    SkeletonTopology,
    default_topology,
    remap_by_name,
)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


# Base bone directions in the canonical frame: x along the body (head at
# +x), y down, z lateral (left at +z). Keyed by child joint name.
_BASE_DIRS = {
    "neck": _unit((0.5, -0.85, 0.0)),
    "chin": _unit((0.8, 0.6, 0.0)),
    "left_eye": _unit((0.55, -0.5, 0.65)),
    "right_eye": _unit((0.55, -0.5, -0.65)),
    "back": _unit((-1.0, 0.0, 0.0)),
    "tail_base": _unit((-0.9, -0.45, 0.0)),
    "tail_tip": _unit((-0.5, 0.85, 0.0)),
    "front_left_shoulder": _unit((0.0, 0.8, 0.6)),
    "front_left_knee": _unit((0.0, 1.0, 0.0)),
    "front_left_hoof": _unit((0.0, 1.0, 0.0)),
    "front_right_shoulder": _unit((0.0, 0.8, -0.6)),
    "front_right_knee": _unit((0.0, 1.0, 0.0)),
    "front_right_hoof": _unit((0.0, 1.0, 0.0)),
    "rear_left_hip": _unit((0.0, 0.8, 0.6)),
    "rear_left_knee": _unit((0.0, 1.0, 0.0)),
    "rear_left_hoof": _unit((0.0, 1.0, 0.0)),
    "rear_right_hip": _unit((0.0, 0.8, -0.6)),
    "rear_right_knee": _unit((0.0, 1.0, 0.0)),
    "rear_right_hoof": _unit((0.0, 1.0, 0.0)),
}

_BONE_LENGTHS = {
    "neck": 0.28,
    "chin": 0.18,
    "left_eye": 0.10,
    "right_eye": 0.10,
    "back": 0.55,
    "tail_base": 0.12,
    "tail_tip": 0.22,
    "front_left_shoulder": 0.12,
    "front_left_knee": 0.22,
    "front_left_hoof": 0.22,
    "front_right_shoulder": 0.12,
    "front_right_knee": 0.22,
    "front_right_hoof": 0.22,
    "rear_left_hip": 0.12,
    "rear_left_knee": 0.22,
    "rear_left_hoof": 0.22,
    "rear_right_hip": 0.12,
    "rear_right_knee": 0.22,
    "rear_right_hoof": 0.22,
}

# Sagittal-plane articulation jitter ranges (radians), keyed by child
# joint whose bone the angle rotates.
_ANGLE_RANGES = {
    "neck": (-0.25, 0.25),
    "chin": (-0.3, 0.3),
    "tail_base": (-0.3, 0.3),
    "tail_tip": (-0.4, 0.4),
    "front_left_knee": (-0.45, 0.45),
    "front_left_hoof": (-0.5, 0.5),
    "front_right_knee": (-0.45, 0.45),
    "front_right_hoof": (-0.5, 0.5),
    "rear_left_knee": (-0.45, 0.45),
    "rear_left_hoof": (-0.5, 0.5),
    "rear_right_knee": (-0.45, 0.45),
    "rear_right_hoof": (-0.5, 0.5),
}

# Diagonal-gait phase offset per limb (trot): front-left with rear-right.
GAIT_OFFSETS = {
    "front_left": 0.0,
    "front_right": math.pi,
    "rear_left": math.pi,
    "rear_right": 0.0,
}

_LIMB_UPPER = {
    "front_left": "front_left_knee",
    "front_right": "front_right_knee",
    "rear_left": "rear_left_knee",
    "rear_right": "rear_right_knee",
}

_LIMB_LOWER = {
    "front_left": "front_left_hoof",
    "front_right": "front_right_hoof",
    "rear_left": "rear_left_hoof",
    "rear_right": "rear_right_hoof",
}


@dataclass(frozen=True)
class QuadrupedParams:
    """Segment lengths, articulation ranges, and gait settings."""

    bone_lengths: dict = field(default_factory=lambda: dict(_BONE_LENGTHS))
    base_directions: dict = field(default_factory=lambda: dict(_BASE_DIRS))
    angle_ranges: dict = field(default_factory=lambda: dict(_ANGLE_RANGES))
    gait_amplitude: float = 0.3

    def __post_init__(self):
        for name, length in self.bone_lengths.items():
            if length <= 0:
                raise ConfigurationError(f"bone length for {name!r} must be > 0")


def gait_angles(params: QuadrupedParams, phase: float) -> dict:
    """Upper-leg swing angle per limb at the given gait phase."""
    return {
        limb: params.gait_amplitude * math.cos(phase + off)
        for limb, off in GAIT_OFFSETS.items()
    }


def _rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def sample_pose3d(params: QuadrupedParams, rng: np.random.Generator,
                  topology: SkeletonTopology | None = None,
                  scene_depth: float = DEFAULT_SCENE_DEPTH,
                  angles: dict | None = None,
                  gait_phase: float | None = None) -> Pose3D:
    """Forward-kinematics sample with the root at (0, 0, scene_depth).

    ``angles`` overrides the sampled articulation angles (child joint
    name -> radians); out-of-range overrides raise ConfigurationError.
    ``gait_phase`` fixes the gait parameter (0 disables if amplitude 0).
    """
    topology = topology or default_topology()
    if gait_phase is None:
        gait_phase = float(rng.uniform(0.0, 2.0 * math.pi))
    sampled: dict = {}
    for name, (lo, hi) in params.angle_ranges.items():
        sampled[name] = float(rng.uniform(lo, hi))
    if angles:
        for name, value in angles.items():
            if name not in params.angle_ranges:
                raise ConfigurationError(f"no articulation named {name!r}")
            lo, hi = params.angle_ranges[name]
            if not (lo <= value <= hi):
                raise ConfigurationError(
                    f"angle {value} for {name!r} outside [{lo}, {hi}]"
                )
            sampled[name] = float(value)

    # Gait drives the shoulder/hip-to-knee bones; lower bones bend with
    # half that swing on top of their jitter.
    swing = gait_angles(params, gait_phase)
    bone_angle = dict(sampled)
    for limb in GAIT_OFFSETS:
        upper = _LIMB_UPPER[limb]
        lower = _LIMB_LOWER[limb]
        bone_angle[upper] = sampled.get(upper, 0.0) * 0.3 + swing[limb]
        bone_angle[lower] = sampled.get(lower, 0.0) * 0.3 + 0.5 * swing[limb]

    parents = topology.parents()
    positions = np.zeros((topology.num_joints, 3))
    # Accumulate sagittal angles down the kinematic chain.
    acc = {topology.root_index: 0.0}
    order: list[int] = []
    stack = [topology.root_index]
    children: dict[int, list[int]] = {i: [] for i in range(topology.num_joints)}
    for a, b in topology.bones:
        children[a].append(b)
    while stack:
        node = stack.pop()
        order.append(node)
        stack.extend(children[node])
    for idx in order:
        if idx == topology.root_index:
            continue
        parent = parents[idx]
        name = topology.joint_names[idx]
        theta = acc[parent] + bone_angle.get(name, 0.0)
        acc[idx] = theta
        direction = _rot_z(theta) @ params.base_directions[name]
        positions[idx] = positions[parent] + params.bone_lengths[name] * direction
    positions[:, 2] += scene_depth
    return Pose3D(positions)


# ---------------------------------------------------------------------------
# Prior

@dataclass(frozen=True)
class PriorSet:
    """Unpaired collection of synthetic 2D poses."""

    poses: tuple
    source_tag: str = "procedural"

    def __post_init__(self):
        if len(self.poses) < 1:
            raise ConfigurationError("PriorSet must contain at least one pose")

    def __len__(self):
        return len(self.poses)

    def as_array(self) -> np.ndarray:
        return np.stack([p.coords for p in self.poses])


def _random_view_2d(pose3d: Pose3D, rng: np.random.Generator,
                    azimuth_range, elevation_range,
                    scene_depth: float) -> tuple[Pose2D, RotationSpec]:
    lo, hi = azimuth_range
    theta = float(rng.uniform(lo, hi))
    lo, hi = elevation_range
    phi = float(rng.uniform(lo, hi))
    r = geometry.rotation_matrix(theta, phi)
    pivot = geometry.default_pivot(scene_depth)
    cam = geometry.rotate(pose3d.coords, r, pivot)
    y = geometry.project(cam, scene_depth).numpy()
    return Pose2D(y), RotationSpec(theta, phi)


def build_prior(n: int, params: QuadrupedParams, rng: np.random.Generator,
                topology: SkeletonTopology | None = None,
                azimuth_range=geometry.DEFAULT_AZIMUTH_RANGE,
                elevation_range=geometry.DEFAULT_ELEVATION_RANGE,
                scene_depth: float = DEFAULT_SCENE_DEPTH) -> PriorSet:
    """Generate n unpaired 2D poses: FK sample -> random camera -> project."""
    if n < 1:
        raise ConfigurationError("prior size must be >= 1")
    topology = topology or default_topology()
    poses = []
    for _ in range(n):
        v = sample_pose3d(params, rng, topology, scene_depth)
        y, _ = _random_view_2d(v, rng, azimuth_range, elevation_range, scene_depth)
        poses.append(y)
    return PriorSet(tuple(poses), source_tag="procedural")


def save_prior(path, prior: PriorSet,
               topology: SkeletonTopology | None = None):
    topology = topology or default_topology()
    payload = {
        "schema_version": POSE_FILE_SCHEMA_VERSION,
        "joint_names": list(topology.joint_names),
        "source_tag": prior.source_tag,
        "poses": [[[float(v) for v in row] for row in p.coords]
                  for p in prior.poses],
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def import_prior(path, topology: SkeletonTopology | None = None) -> PriorSet:
    """Load a pose-set file, remapping joints by name onto the topology."""
    topology = topology or default_topology()
    try:
        with open(path) as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaMismatchError(f"malformed pose file: {e}") from e
    if payload.get("schema_version") != POSE_FILE_SCHEMA_VERSION:
        raise SchemaMismatchError(
            f"unknown pose-file schema version: {payload.get('schema_version')!r}"
        )
    names = list(payload["joint_names"])
    poses = []
    for rows in payload["poses"]:
        coords = np.asarray(rows, dtype=np.float64)
        if coords.shape[0] != len(names):
            raise SchemaMismatchError("pose row count does not match joint names")
        poses.append(Pose2D(remap_by_name(names, coords, topology)))
    return PriorSet(tuple(poses), source_tag=str(payload.get("source_tag", "imported")))


# ---------------------------------------------------------------------------
# Evaluation scenes and training images

@dataclass(frozen=True)
class EvalScene:
    """Held-out scene with ground truth hidden from training.

    ``gt_pose3d`` is in the canonical (unrotated) frame; the camera-frame
    pose is rotate(gt_pose3d, R(camera)).
    """

    image: np.ndarray
    gt_pose2d: Pose2D
    gt_pose3d: Pose3D
    camera: RotationSpec

    def camera_frame_pose3d(self, scene_depth: float = DEFAULT_SCENE_DEPTH) -> Pose3D:
        r = geometry.rotation_matrix(self.camera.azimuth, self.camera.elevation)
        pivot = geometry.default_pivot(scene_depth)
        cam = geometry.rotate(self.gt_pose3d.coords, r, pivot)
        return Pose3D(cam.numpy())

    def consistency_error(self, scene_depth: float = DEFAULT_SCENE_DEPTH) -> float:
        cam = self.camera_frame_pose3d(scene_depth)
        y = geometry.project(cam.coords, scene_depth).numpy()
        return float(np.abs(y - self.gt_pose2d.coords).max())


@dataclass(frozen=True)
class AppearanceConfig:
    """Desk-scale appearance perturbations applied to rendered images."""

    intensity_range: tuple = (0.7, 1.0)
    noise_sigma: float = 0.04
    pose_jitter_scale: tuple = (0.92, 1.08)   # train-time only
    pose_jitter_shift: float = 0.05           # train-time only


def perturb_image(image: np.ndarray, rng: np.random.Generator,
                  appearance: AppearanceConfig) -> np.ndarray:
    lo, hi = appearance.intensity_range
    out = image * float(rng.uniform(lo, hi))
    out = out + rng.normal(0.0, appearance.noise_sigma, size=image.shape)
    return np.clip(out, 0.0, 1.0)


def build_eval_set(n: int, params: QuadrupedParams, rng: np.random.Generator,
                   topology: SkeletonTopology | None = None,
                   image_size: int = renderer.DEFAULT_SIZE,
                   gamma: float = renderer.DEFAULT_GAMMA,
                   appearance: AppearanceConfig | None = None,
                   azimuth_range=geometry.DEFAULT_AZIMUTH_RANGE,
                   elevation_range=geometry.DEFAULT_ELEVATION_RANGE,
                   scene_depth: float = DEFAULT_SCENE_DEPTH) -> list[EvalScene]:
    """Internally consistent (image, gt 2D, gt 3D, camera) scenes."""
    if n < 1:
        raise ConfigurationError("eval-set size must be >= 1")
    topology = topology or default_topology()
    appearance = appearance or AppearanceConfig()
    scenes = []
    for _ in range(n):
        v = sample_pose3d(params, rng, topology, scene_depth)
        y, camera = _random_view_2d(v, rng, azimuth_range, elevation_range,
                                    scene_depth)
        img = renderer.render(y, topology, gamma, image_size, image_size).numpy()
        img = perturb_image(img, rng, appearance)
        scenes.append(EvalScene(img, y, v, camera))
    return scenes


def build_train_images(n: int, params: QuadrupedParams,
                       rng: np.random.Generator,
                       topology: SkeletonTopology | None = None,
                       image_size: int = renderer.DEFAULT_SIZE,
                       gamma: float = renderer.DEFAULT_GAMMA,
                       appearance: AppearanceConfig | None = None,
                       azimuth_range=geometry.DEFAULT_AZIMUTH_RANGE,
                       elevation_range=geometry.DEFAULT_ELEVATION_RANGE,
                       scene_depth: float = DEFAULT_SCENE_DEPTH):
    """Unlabelled training images (the poses behind them are discarded)."""
    topology = topology or default_topology()
    appearance = appearance or AppearanceConfig()
    images = np.empty((n, image_size, image_size), dtype=np.float64)
    for i in range(n):
        v = sample_pose3d(params, rng, topology, scene_depth)
        y, _ = _random_view_2d(v, rng, azimuth_range, elevation_range, scene_depth)
        coords = y.coords
        lo, hi = appearance.pose_jitter_scale
        coords = coords * float(rng.uniform(lo, hi))
        coords = coords + rng.uniform(-appearance.pose_jitter_shift,
                                      appearance.pose_jitter_shift, size=(1, 2))
        img = renderer.render(np.clip(coords, -1.0, 1.0), topology, gamma,
                              image_size, image_size).numpy()
        images[i] = perturb_image(img, rng, appearance)
    return images


# ---------------------------------------------------------------------------
# On-disk dataset with manifest

def _seed_streams(seed: int) -> dict:
    """Disjoint rng streams so prior / train / eval poses stay unpaired."""
    ss = np.random.SeedSequence(seed)
    prior_ss, train_ss, eval_ss = ss.spawn(3)
    return {
        "prior": np.random.Generator(np.random.PCG64(prior_ss)),
        "train": np.random.Generator(np.random.PCG64(train_ss)),
        "eval": np.random.Generator(np.random.PCG64(eval_ss)),
    }


def write_dataset(out_dir, n_train: int, n_eval: int,
                  params: QuadrupedParams | None = None,
                  seed: int = 0,
                  topology: SkeletonTopology | None = None,
                  image_size: int = renderer.DEFAULT_SIZE,
                  gamma: float = renderer.DEFAULT_GAMMA,
                  appearance: AppearanceConfig | None = None,
                  scene_depth: float = DEFAULT_SCENE_DEPTH) -> Path:
    """Write train/eval images, ground-truth files, and a manifest.

    Returns the manifest path. Layout:
      out_dir/images/{split}_{index}.png
      out_dir/gt/eval_{index}.json      (eval scenes only)
      out_dir/manifest.jsonl
    """
    params = params or QuadrupedParams()
    topology = topology or default_topology()
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(exist_ok=True)
    streams = _seed_streams(seed)

    records = []
    train_images = build_train_images(
        n_train, params, streams["train"], topology, image_size, gamma,
        appearance, scene_depth=scene_depth)
    for i in range(n_train):
        rel = f"images/train_{i:06d}.png"
        renderer.save_png(out / rel, train_images[i])
        records.append({"path": rel, "split": "train", "index": i})

    scenes = build_eval_set(
        n_eval, params, streams["eval"], topology, image_size, gamma,
        appearance, scene_depth=scene_depth)
    for i, scene in enumerate(scenes):
        rel = f"images/eval_{i:06d}.png"
        renderer.save_png(out / rel, scene.image)
        gt_rel = f"gt/eval_{i:06d}.json"
        with open(out / gt_rel, "w") as f:
            json.dump({
                "schema_version": POSE_FILE_SCHEMA_VERSION,
                "joint_names": list(topology.joint_names),
                "gt_pose2d": scene.gt_pose2d.coords.tolist(),
                "gt_pose3d": scene.gt_pose3d.coords.tolist(),
                "camera": {"azimuth": scene.camera.azimuth,
                           "elevation": scene.camera.elevation},
            }, f)
        records.append({"path": rel, "split": "eval", "index": i, "gt": gt_rel})

    manifest = out / "manifest.jsonl"
    with open(manifest, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    with open(out / "dataset_meta.json", "w") as f:
        json.dump({
            "schema_version": POSE_FILE_SCHEMA_VERSION,
            "seed": seed,
            "n_train": n_train,
            "n_eval": n_eval,
            "image_size": image_size,
            "gamma": gamma,
            "scene_depth": scene_depth,
            "topology": topology.to_dict(),
        }, f, indent=1)
    return manifest


def load_dataset(root) -> dict:
    """Read a written dataset back: train images + eval scenes."""
    root = Path(root)
    with open(root / "dataset_meta.json") as f:
        meta = json.load(f)
    topology = SkeletonTopology.from_dict(meta["topology"])
    train_images, eval_scenes = [], []
    with open(root / "manifest.jsonl") as f:
        for line in f:
            rec = json.loads(line)
            img = renderer.load_png(root / rec["path"])
            if rec["split"] == "train":
                train_images.append(img)
            else:
                with open(root / rec["gt"]) as g:
                    gt = json.load(g)
                eval_scenes.append(EvalScene(
                    img,
                    Pose2D(np.asarray(gt["gt_pose2d"])),
                    Pose3D(np.asarray(gt["gt_pose3d"])),
                    RotationSpec(gt["camera"]["azimuth"], gt["camera"]["elevation"]),
                ))
    return {
        "meta": meta,
        "topology": topology,
        "train_images": np.stack(train_images) if train_images else np.empty((0,)),
        "eval_scenes": eval_scenes,
    }
