"""Differentiable skeleton rasterizer.

Each bone contributes exp(-gamma * d^2) where d is the Euclidean distance
from the pixel center (in normalized [-1,1] coordinates) to the bone's
line segment; pixels take the max over bones. Gradients flow to the joint
coordinates through the arg-max bone.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import ConfigurationError
from .skeleton import SkeletonTopology

DEFAULT_GAMMA = 500.0
DEFAULT_SIZE = 128


def pixel_grid(h: int, w: int, dtype=torch.float64,
               device=None) -> torch.Tensor:
    """(H, W, 2) normalized coordinates of pixel centers."""
    xs = (torch.arange(w, dtype=dtype, device=device) + 0.5) * (2.0 / w) - 1.0
    ys = (torch.arange(h, dtype=dtype, device=device) + 0.5) * (2.0 / h) - 1.0
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=-1)


def _segment_sq_dist(points: torch.Tensor, a: torch.Tensor,
                     b: torch.Tensor) -> torch.Tensor:
    """Squared distance from each point to segments [a, b].

    points: (P, 2); a, b: (..., K, 2). Returns (..., K, P).
    """
    ab = b - a                                        # (..., K, 2)
    denom = (ab ** 2).sum(-1, keepdim=True)           # (..., K, 1)
    ap = points.unsqueeze(-3) - a.unsqueeze(-2)       # (..., K, P, 2)
    t = (ap * ab.unsqueeze(-2)).sum(-1) / denom.clamp_min(1e-30)
    t = t.clamp(0.0, 1.0)                             # (..., K, P)
    closest = a.unsqueeze(-2) + t.unsqueeze(-1) * ab.unsqueeze(-2)
    diff = points.unsqueeze(-3) - closest
    return (diff ** 2).sum(-1)


def render(pose, topology: SkeletonTopology, gamma: float = DEFAULT_GAMMA,
           h: int = DEFAULT_SIZE, w: int = DEFAULT_SIZE) -> torch.Tensor:
    """Rasterize one pose or a batch of poses.

    Accepts (J, 2) or (B, J, 2); returns (H, W) or (B, H, W) with values
    in [0, 1].
    """
    if gamma <= 0:
        raise ConfigurationError(f"gamma must be positive, got {gamma}")
    coords = getattr(pose, "coords", pose)
    if isinstance(coords, torch.Tensor):
        pts = coords
    else:
        arr = np.asarray(coords)
        if not arr.flags.writeable:
            arr = arr.copy()
        pts = torch.as_tensor(arr, dtype=torch.float64)
    single = pts.dim() == 2
    if single:
        pts = pts.unsqueeze(0)
    parents = [a for a, _ in topology.bones]
    children = [b for _, b in topology.bones]
    a = pts[:, parents, :]                            # (B, K, 2)
    b = pts[:, children, :]
    grid = pixel_grid(h, w, dtype=pts.dtype, device=pts.device)
    flat = grid.reshape(-1, 2)                        # (P, 2)
    sq = _segment_sq_dist(flat, a, b)                 # (B, K, P)
    img = torch.exp(-gamma * sq).max(dim=-2).values   # (B, P)
    img = img.reshape(pts.shape[0], h, w)
    return img[0] if single else img


def render_batch(poses, topology: SkeletonTopology,
                 gamma: float = DEFAULT_GAMMA, h: int = DEFAULT_SIZE,
                 w: int = DEFAULT_SIZE) -> list:
    """Elementwise render of a list of poses, order preserved."""
    return [render(p, topology, gamma, h, w) for p in poses]


def to_uint8(image) -> np.ndarray:
    """Scale [0,1] to 8-bit grayscale, round half up."""
    arr = image.detach().cpu().numpy() if isinstance(image, torch.Tensor) else np.asarray(image)
    return np.floor(arr * 255.0 + 0.5).clip(0, 255).astype(np.uint8)


def save_png(path, image):
    from PIL import Image

    Image.fromarray(to_uint8(image), mode="L").save(path)


def load_png(path) -> np.ndarray:
    """Read a grayscale PNG back to float64 in [0, 1]."""
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float64)
    return arr / 255.0
