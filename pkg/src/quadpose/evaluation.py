"""Quantitative metrics: 2D keypoint accuracy (PCK) and 3D joint error
(MPJPE / Procrustes-aligned MPJPE), plus inference over checkpoints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import geometry
from .errors import AlignmentError, ConfigurationError, SchemaMismatchError
from .networks import ModelParams, load_checkpoint
from .skeleton import DEFAULT_SCENE_DEPTH, Pose2D, Pose3D, SkeletonTopology, default_topology

DEFAULT_ALPHA = 0.05

REPORT_GROUPS = ("Eyes", "Chin", "Shoulders", "Knees", "Hooves")

# Joint-name fragments defining the report groups (front shoulders and
# rear hips share the "Shoulders" column).
_GROUP_PATTERNS = {
    "Eyes": ("eye",),
    "Chin": ("chin",),
    "Shoulders": ("shoulder", "hip"),
    "Knees": ("knee",),
    "Hooves": ("hoof",),
}


def _coords(pose) -> np.ndarray:
    return np.asarray(getattr(pose, "coords", pose), dtype=np.float64)


def bbox_norm_length(gt) -> float:
    """Longer side of the tight bounding box of the ground-truth pose."""
    arr = _coords(gt)
    spans = arr.max(axis=0) - arr.min(axis=0)
    return float(spans.max())


def pck(pred, gt, alpha: float = DEFAULT_ALPHA,
        norm_length: float | None = None) -> np.ndarray:
    """Per-joint correctness: distance <= alpha * norm_length."""
    p, g = _coords(pred), _coords(gt)
    if p.shape != g.shape:
        raise SchemaMismatchError(f"shape mismatch: {p.shape} vs {g.shape}")
    if norm_length is None:
        norm_length = bbox_norm_length(g)
    if norm_length <= 0:
        raise ConfigurationError("norm_length must be positive")
    dists = np.linalg.norm(p - g, axis=-1)
    return dists <= alpha * norm_length


def group_indices(topology: SkeletonTopology) -> dict:
    """Report-group membership over the evaluation subset, by joint name."""
    groups = {g: [] for g in REPORT_GROUPS}
    for pos, joint_idx in enumerate(topology.eval_subset):
        name = topology.joint_names[joint_idx]
        for group, patterns in _GROUP_PATTERNS.items():
            if any(pat in name for pat in patterns):
                groups[group].append(pos)
                break
    return groups


@dataclass
class PckReport:
    """Aggregated keypoint-accuracy rates, in percent."""

    per_joint_rates: np.ndarray
    group_rates: dict
    mean_rate: float
    alpha: float
    norm_lengths: list = field(default_factory=list)
    num_samples: int = 0

    def row(self) -> list:
        return [self.group_rates[g] for g in REPORT_GROUPS] + [self.mean_rate]

    def format_table(self, label: str = "Ours", data_label: str = "synthetic") -> str:
        header = ["Method", "Evaluation Data", *REPORT_GROUPS, "Mean"]
        values = [label, data_label] + [f"{v:.2f}" for v in self.row()]
        widths = [max(len(h), len(v)) + 2 for h, v in zip(header, values)]
        line = "".join(h.ljust(w) for h, w in zip(header, widths))
        vals = "".join(v.ljust(w) for v, w in zip(values, widths))
        rule = "-" * len(line)
        return "\n".join([rule, line, rule, vals, rule])

    def to_dict(self) -> dict:
        return {
            "per_joint_rates": [float(v) for v in np.atleast_1d(self.per_joint_rates)],
            "group_rates": {k: float(v) for k, v in self.group_rates.items()},
            "mean_rate": float(self.mean_rate),
            "alpha": float(self.alpha),
            "norm_lengths": [float(v) for v in self.norm_lengths],
            "num_samples": int(self.num_samples),
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def from_groups(cls, group_rates: dict, mean_rate: float,
                    alpha: float = DEFAULT_ALPHA) -> "PckReport":
        """Build a report from published group rates (reference rows).

        The stated mean is preserved verbatim rather than recomputed; the
        per-joint breakdown behind a published row is not recoverable.
        """
        missing = [g for g in REPORT_GROUPS if g not in group_rates]
        if missing:
            raise SchemaMismatchError(f"missing report groups: {missing}")
        return cls(
            per_joint_rates=np.array([]),
            group_rates={g: float(group_rates[g]) for g in REPORT_GROUPS},
            mean_rate=float(mean_rate),
            alpha=alpha,
        )


def pck_report(preds, gts, alpha: float = DEFAULT_ALPHA,
               topology: SkeletonTopology | None = None,
               grouping: dict | None = None) -> PckReport:
    """Aggregate PCK over aligned prediction/ground-truth lists.

    Poses must already be on the evaluation subset. The per-sample
    normalizer is the longer bbox side of the ground-truth pose.
    """
    if len(preds) != len(gts):
        raise SchemaMismatchError(
            f"{len(preds)} predictions vs {len(gts)} ground truths")
    if len(preds) == 0:
        raise ConfigurationError("empty evaluation set")
    topology = topology or default_topology()
    groups = grouping or group_indices(topology)
    correct = []
    norms = []
    for p, g in zip(preds, gts):
        n = bbox_norm_length(g)
        correct.append(pck(p, g, alpha, n))
        norms.append(n)
    mat = np.stack(correct)                          # (N, 15)
    per_joint = mat.mean(axis=0) * 100.0
    group_rates = {
        name: float(per_joint[idx].mean()) if idx else float("nan")
        for name, idx in groups.items()
    }
    return PckReport(
        per_joint_rates=per_joint,
        group_rates=group_rates,
        mean_rate=float(per_joint.mean()),
        alpha=alpha,
        norm_lengths=norms,
        num_samples=mat.shape[0],
    )


def subset_coords(coords, topology: SkeletonTopology) -> np.ndarray:
    """Gather eval-subset joints from full-schema coordinates."""
    arr = _coords(coords)
    if arr.shape[0] != topology.num_joints:
        raise SchemaMismatchError(
            f"pose has {arr.shape[0]} joints, topology has {topology.num_joints}")
    return arr[list(topology.eval_subset)]


# ---------------------------------------------------------------------------
# 3D metrics

def mpjpe(pred, gt) -> float:
    """Mean Euclidean per-joint error."""
    p, g = _coords(pred), _coords(gt)
    if p.shape != g.shape:
        raise SchemaMismatchError(f"shape mismatch: {p.shape} vs {g.shape}")
    return float(np.linalg.norm(p - g, axis=-1).mean())


def procrustes_align(pred, gt) -> np.ndarray:
    """Optimal similarity alignment (rotation, translation, scale) of
    pred onto gt; returns the aligned prediction."""
    p, g = _coords(pred), _coords(gt)
    if p.shape != g.shape:
        raise SchemaMismatchError(f"shape mismatch: {p.shape} vs {g.shape}")
    mu_p, mu_g = p.mean(axis=0), g.mean(axis=0)
    p0, g0 = p - mu_p, g - mu_g
    norm_p = np.linalg.norm(p0)
    norm_g = np.linalg.norm(g0)
    if norm_g < 1e-12:
        raise AlignmentError("ground-truth joints are coincident")
    if norm_p < 1e-12:
        raise AlignmentError("predicted joints are coincident")
    p0n, g0n = p0 / norm_p, g0 / norm_g
    a = g0n.T @ p0n
    u, s, vt = np.linalg.svd(a)
    det = np.linalg.det(u @ vt)
    d = np.ones(a.shape[0])
    d[-1] = np.sign(det) if det != 0 else 1.0
    rot = u @ np.diag(d) @ vt
    scale = (s * d).sum() * norm_g / norm_p
    return scale * (p0 @ rot.T) + mu_g


def pa_mpjpe(pred, gt) -> float:
    """MPJPE after optimal similarity alignment (orthogonal Procrustes)."""
    return mpjpe(procrustes_align(pred, gt), gt)


# ---------------------------------------------------------------------------
# Inference

def predict_poses(params: ModelParams, images,
                  scene_depth: float = DEFAULT_SCENE_DEPTH,
                  batch_size: int = 32):
    """Run the main mapping only (image -> skeleton -> 2D pose -> 3D pose).

    Returns (pred2d, pred3d) as float64 arrays (N, J, 2) and (N, J, 3).
    """
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    preds2d, preds3d = [], []
    for mod in params.modules().values():
        mod.eval()
    with torch.no_grad():
        for start in range(0, arr.shape[0], batch_size):
            chunk = torch.as_tensor(arr[start:start + batch_size]).unsqueeze(1)
            s = params.image_to_skeleton(chunk)
            y = params.skeleton_to_pose(s)
            d = params.lifter(y)
            v = geometry.lift(y.to(torch.float64), d.to(torch.float64), scene_depth)
            preds2d.append(y.numpy().astype(np.float64))
            preds3d.append(v.numpy())
    return np.concatenate(preds2d), np.concatenate(preds3d)


def predict(checkpoint_path, images,
            scene_depth: float = DEFAULT_SCENE_DEPTH,
            topology: SkeletonTopology | None = None):
    """Load a checkpoint and predict; returns (list[Pose2D], list[Pose3D])."""
    params, _ = load_checkpoint(checkpoint_path, topology)
    pred2d, pred3d = predict_poses(params, images, scene_depth)
    return ([Pose2D(p) for p in pred2d], [Pose3D(p) for p in pred3d])


def evaluate_scenes(params: ModelParams, scenes,
                    alpha: float = DEFAULT_ALPHA,
                    scene_depth: float = DEFAULT_SCENE_DEPTH) -> dict:
    """Full metric pass over eval scenes: PCK report + 3D errors."""
    topology = params.topology
    images = np.stack([s.image for s in scenes])
    pred2d, pred3d = predict_poses(params, images, scene_depth)
    report = pck_report(
        [subset_coords(p, topology) for p in pred2d],
        [subset_coords(s.gt_pose2d.coords, topology) for s in scenes],
        alpha=alpha, topology=topology)
    errs, pa_errs = [], []
    for p3, scene in zip(pred3d, scenes):
        gt_cam = scene.camera_frame_pose3d(scene_depth).coords
        errs.append(mpjpe(p3, gt_cam))
        pa_errs.append(pa_mpjpe(p3, gt_cam))
    return {
        "pck_report": report,
        "mpjpe": float(np.mean(errs)),
        "pa_mpjpe": float(np.mean(pa_errs)),
        "pred2d": pred2d,
        "pred3d": pred3d,
    }
