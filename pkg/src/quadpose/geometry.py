"""Rotation/projection machinery and the geometry-consistency losses.

Everything here is a pure function over torch tensors so the full
lift -> rotate -> project -> re-lift -> un-rotate -> re-project cycle is
differentiable end to end. Batched inputs are (B, J, C); single poses
(J, C) are accepted and treated as a batch of one where sensible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigurationError, DegenerateDepthError, InsufficientBatchError, SchemaMismatchError
from .skeleton import DEFAULT_SCENE_DEPTH

DEFAULT_AZIMUTH_RANGE = (-math.pi, math.pi)
DEFAULT_ELEVATION_RANGE = (-math.pi / 9.0, math.pi / 9.0)
DEFAULT_Z_MIN = 0.1


def _as_tensor(x, dtype=torch.float64) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    coords = np.asarray(getattr(x, "coords", x))
    if not coords.flags.writeable:
        coords = coords.copy()
    return torch.as_tensor(coords, dtype=dtype)


def rotation_matrix(azimuth: float, elevation: float,
                    dtype=torch.float64) -> torch.Tensor:
    """R = R_elev(phi) @ R_azim(theta).

    Azimuth rotates about the vertical (y, pointing down) axis; elevation
    tilts about the lateral (x) axis.
    """
    ct, st = math.cos(azimuth), math.sin(azimuth)
    cp, sp = math.cos(elevation), math.sin(elevation)
    r_azim = torch.tensor(
        [[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]], dtype=dtype
    )
    r_elev = torch.tensor(
        [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]], dtype=dtype
    )
    return r_elev @ r_azim


def sample_rotation(rng: np.random.Generator,
                    azimuth_range=DEFAULT_AZIMUTH_RANGE,
                    elevation_range=DEFAULT_ELEVATION_RANGE,
                    dtype=torch.float64) -> torch.Tensor:
    """Draw theta ~ U(azimuth_range), phi ~ U(elevation_range)."""
    for lo, hi in (azimuth_range, elevation_range):
        if hi < lo:
            raise ConfigurationError(f"empty angle range ({lo}, {hi})")
    theta = float(rng.uniform(*azimuth_range))
    phi = float(rng.uniform(*elevation_range))
    return rotation_matrix(theta, phi, dtype=dtype)


def default_pivot(scene_depth: float = DEFAULT_SCENE_DEPTH,
                  dtype=torch.float64) -> torch.Tensor:
    return torch.tensor([0.0, 0.0, scene_depth], dtype=dtype)


def rotate(v, R, pivot=None) -> torch.Tensor:
    """Rotate joints about ``pivot``: R @ (joint - pivot) + pivot."""
    v = _as_tensor(v)
    R = _as_tensor(R).to(v.dtype)
    if pivot is None:
        pivot = default_pivot(dtype=v.dtype)
    pivot = _as_tensor(pivot).to(v.dtype)
    centered = v - pivot
    # (..., J, 3) @ (..., 3, 3)^T
    rotated = torch.matmul(centered, R.transpose(-1, -2))
    return rotated + pivot


def project(v, scene_depth: float = DEFAULT_SCENE_DEPTH,
            z_min: float = DEFAULT_Z_MIN) -> torch.Tensor:
    """Perspective projection (x/z * depth, y/z * depth).

    A pose lying on the plane z = scene_depth projects to its own x, y.
    """
    v = _as_tensor(v)
    z = v[..., 2]
    if torch.any(z <= z_min):
        raise DegenerateDepthError(
            f"joint depth <= z_min ({z_min}); min depth {float(z.min()):.4g}"
        )
    return v[..., :2] * (scene_depth / z).unsqueeze(-1)


def lift(y, depth_offsets, scene_depth: float = DEFAULT_SCENE_DEPTH,
         z_min: float = DEFAULT_Z_MIN) -> torch.Tensor:
    """Back-project 2D joints with per-joint depth offsets d (z = d + depth)."""
    y = _as_tensor(y)
    d = _as_tensor(depth_offsets).to(y.dtype)
    z = d + scene_depth
    if torch.any(z <= z_min):
        raise DegenerateDepthError(
            f"depth offset puts joint at z <= z_min ({z_min})"
        )
    xy = y * (z / scene_depth).unsqueeze(-1)
    return torch.cat([xy, z.unsqueeze(-1)], dim=-1)


@dataclass
class CycleOutputs:
    """All six poses produced by the geometry-consistency cycle."""

    input2d: torch.Tensor         # the 2D pose the cycle started from
    pose3d: torch.Tensor          # lifted from the input 2D pose
    rotated3d: torch.Tensor       # pose3d under the sampled rotation
    projected2d: torch.Tensor     # 2D projection of rotated3d
    relifted3d: torch.Tensor      # lift of projected2d by the same lifter
    unrotated3d: torch.Tensor     # relifted3d under the inverse rotation
    reprojected2d: torch.Tensor   # final 2D projection


def consistency_cycle(y, lifter, R, pivot=None,
                      scene_depth: float = DEFAULT_SCENE_DEPTH,
                      z_min: float = DEFAULT_Z_MIN) -> CycleOutputs:
    """Run the full rotation/projection loop.

    ``lifter`` maps a (B, J, 2) pose batch to (B, J) depth offsets. The
    same lifter is applied on both the forward and rotated branches.
    """
    y = _as_tensor(y)
    R = _as_tensor(R).to(y.dtype)
    if pivot is None:
        pivot = default_pivot(dtype=y.dtype)
    v = lift(y, lifter(y), scene_depth, z_min)
    v_rot = rotate(v, R, pivot)
    y_rot = project(v_rot, scene_depth, z_min)
    v_relift = lift(y_rot, lifter(y_rot), scene_depth, z_min)
    v_back = rotate(v_relift, R.transpose(-1, -2), pivot)
    y_back = project(v_back, scene_depth, z_min)
    return CycleOutputs(y, v, v_rot, y_rot, v_relift, v_back, y_back)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise SchemaMismatchError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _batched(x: torch.Tensor) -> torch.Tensor:
    return x.unsqueeze(0) if x.dim() == 2 else x


def loss_2d(y, y_back) -> torch.Tensor:
    """Mean over the batch of the squared Frobenius norm of (y' - y)."""
    y, y_back = _as_tensor(y), _as_tensor(y_back)
    _check_same_shape(y, y_back)
    diff = _batched(y_back) - _batched(y)
    return (diff ** 2).sum(dim=(-1, -2)).mean()


def loss_3d(v, v_back) -> torch.Tensor:
    """Pairwise-deformation loss over adjacent batch pairs (j, j+1 mod B)."""
    v, v_back = _as_tensor(v), _as_tensor(v_back)
    _check_same_shape(v, v_back)
    v, v_back = _batched(v), _batched(v_back)
    b = v.shape[0]
    if b < 2:
        raise InsufficientBatchError("loss_3d needs a batch of at least 2")
    roll_v = torch.roll(v, shifts=-1, dims=0)
    roll_vb = torch.roll(v_back, shifts=-1, dims=0)
    diff = (v_back - roll_vb) - (v - roll_v)
    return (diff ** 2).sum(dim=(-1, -2)).mean()


def loss_r3d(v_rot, v_relift) -> torch.Tensor:
    """Mean over the batch of the squared Frobenius norm of (v_relift - v_rot)."""
    v_rot, v_relift = _as_tensor(v_rot), _as_tensor(v_relift)
    _check_same_shape(v_rot, v_relift)
    diff = _batched(v_relift) - _batched(v_rot)
    return (diff ** 2).sum(dim=(-1, -2)).mean()


def loss_gc(cycle: CycleOutputs) -> torch.Tensor:
    """Sum of the 2D, pairwise-3D, and rotated-3D consistency losses."""
    return (
        loss_2d(cycle.input2d, cycle.reprojected2d)
        + loss_3d(cycle.pose3d, cycle.unrotated3d)
        + loss_r3d(cycle.rotated3d, cycle.relifted3d)
    )
