"""Static figure output: 2D overlays and novel-view 3D panels."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .skeleton import SkeletonTopology, denormalize_pose2d, Pose2D  # noqa: E402


def _draw_bones_2d(ax, coords_px, topology, color, label=None):
    first = True
    for a, b in topology.bones:
        seg = np.stack([coords_px[a], coords_px[b]])
        ax.plot(seg[:, 0], seg[:, 1], color=color, linewidth=1.5,
                label=label if first else None)
        first = False
    ax.scatter(coords_px[:, 0], coords_px[:, 1], s=6, color=color)


def overlay_2d(image: np.ndarray, pred2d, topology: SkeletonTopology,
               path, gt2d=None):
    """Image with the predicted pose in red and ground truth in green."""
    h, w = image.shape[:2]
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(image, cmap="gray", vmin=0, vmax=1)
    pred_px = denormalize_pose2d(Pose2D(np.asarray(getattr(pred2d, "coords", pred2d))), (h, w))
    _draw_bones_2d(ax, pred_px, topology, "red", "prediction")
    if gt2d is not None:
        gt_px = denormalize_pose2d(Pose2D(np.asarray(getattr(gt2d, "coords", gt2d))), (h, w))
        _draw_bones_2d(ax, gt_px, topology, "lime", "ground truth")
    ax.legend(loc="lower right", fontsize=7)
    ax.set_axis_off()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def novel_views_3d(pose3d, topology: SkeletonTopology, path,
                   azimuths=(0.0, 60.0, 120.0, 240.0)):
    """Panels of the 3D pose rendered from several viewpoints."""
    coords = np.asarray(getattr(pose3d, "coords", pose3d))
    fig = plt.figure(figsize=(3 * len(azimuths), 3))
    for i, az in enumerate(azimuths):
        ax = fig.add_subplot(1, len(azimuths), i + 1, projection="3d")
        for a, b in topology.bones:
            seg = np.stack([coords[a], coords[b]])
            ax.plot(seg[:, 0], seg[:, 2], seg[:, 1], color="tab:red", linewidth=1.5)
        ax.scatter(coords[:, 0], coords[:, 2], coords[:, 1], s=6, color="tab:red")
        ax.view_init(elev=12.0, azim=az)
        ax.invert_zaxis()  # image y points down
        ax.set_title(f"azim {az:.0f}", fontsize=8)
        ax.set_axis_off()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
