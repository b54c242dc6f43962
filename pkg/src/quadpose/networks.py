"""The four learnable maps: image->skeleton, skeleton->2D pose,
2D pose->depth offsets, and the skeleton-image discriminator.

Architectures are config-driven; defaults are desk-scale. No batch
statistics anywhere, so outputs are batch-independent by construction.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError, ConfigurationError, SchemaMismatchError
from .skeleton import SkeletonTopology, default_topology

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    num_joints: int = 20
    image_size: int = 128
    in_channels: int = 1
    base_channels: int = 16
    lifter_units: int = 1024
    lifter_blocks: int = 2
    dropout: float = 0.0
    # Downsampling factor of the keypoint heatmap relative to the input
    # image; smaller stride = finer heatmap = more precise coordinates.
    heatmap_stride: int = 4

    def __post_init__(self):
        if self.image_size % 4 != 0:
            raise ConfigurationError("image_size must be divisible by 4")
        if self.heatmap_stride not in (1, 2, 4):
            raise ConfigurationError("heatmap_stride must be 1, 2, or 4")
        for field_name in ("num_joints", "image_size", "in_channels",
                           "base_channels", "lifter_units", "lifter_blocks"):
            if getattr(self, field_name) < 1:
                raise ConfigurationError(f"{field_name} must be >= 1")


def _conv(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, kernel_size=3, stride=stride, padding=1)


class ImageToSkeleton(nn.Module):
    """Convolutional encoder-decoder with skip connections; sigmoid output."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        c = cfg.base_channels
        self.enc1 = _conv(cfg.in_channels, c)
        self.enc2 = _conv(c, 2 * c, stride=2)
        self.enc3 = _conv(2 * c, 2 * c)
        self.enc4 = _conv(2 * c, 4 * c, stride=2)
        self.mid = _conv(4 * c, 4 * c)
        self.dec1 = _conv(4 * c, 2 * c)
        self.dec2 = _conv(2 * c, c)
        self.out = _conv(c, 1)
        self.act = nn.ReLU()
        self.up = nn.Upsample(scale_factor=2, mode="nearest")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (B, C, H, W) in [0,1] -> (B, 1, H, W) in [0,1]."""
        e1 = self.act(self.enc1(x))
        e2 = self.act(self.enc2(e1))
        e3 = self.act(self.enc3(e2))
        e4 = self.act(self.enc4(e3))
        m = self.act(self.mid(e4))
        d1 = self.act(self.dec1(self.up(m))) + e3
        d2 = self.act(self.dec2(self.up(d1))) + e1
        return torch.sigmoid(self.out(d2))


class SkeletonToPose(nn.Module):
    """Conv encoder with a spatial-softmax keypoint head.

    Expected coordinates over per-joint heatmaps give outputs in (-1, 1).
    """

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        c = cfg.base_channels
        stride = cfg.heatmap_stride
        self.conv1 = _conv(1, c, stride=2 if stride >= 2 else 1)
        self.conv2 = _conv(c, 2 * c, stride=2 if stride == 4 else 1)
        self.conv3 = _conv(2 * c, 2 * c)
        self.heat = _conv(2 * c, cfg.num_joints)
        self.act = nn.ReLU()
        side = cfg.image_size // stride
        coords = (torch.arange(side, dtype=torch.float32) + 0.5) * (2.0 / side) - 1.0
        self.register_buffer("grid_x", coords.view(1, 1, 1, side))
        self.register_buffer("grid_y", coords.view(1, 1, side, 1))

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        """s: (B, 1, H, W) -> (B, J, 2) in (-1, 1)."""
        h = self.act(self.conv1(s))
        h = self.act(self.conv2(h))
        h = self.act(self.conv3(h))
        heat = self.heat(h)                           # (B, J, H/stride, W/stride)
        b, j, hh, ww = heat.shape
        weights = torch.softmax(heat.reshape(b, j, -1), dim=-1).reshape(b, j, hh, ww)
        x = (weights * self.grid_x).sum(dim=(-1, -2))
        y = (weights * self.grid_y).sum(dim=(-1, -2))
        return torch.stack([x, y], dim=-1)


class _ResidualBlock(nn.Module):
    def __init__(self, units: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(units, units)
        self.fc2 = nn.Linear(units, units)
        self.act = nn.ReLU()
        self.drop = nn.Dropout(dropout) if dropout > 0 else nn.Identity()

    def forward(self, x):
        h = self.drop(self.act(self.fc1(x)))
        h = self.drop(self.act(self.fc2(h)))
        return x + h


class PoseLifter(nn.Module):
    """Fully connected residual regressor from 2D pose to depth offsets.

    The final layer is zero-initialized so a fresh model predicts d = 0
    (every pose starts on the constant-depth plane).
    """

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        j, u = cfg.num_joints, cfg.lifter_units
        self.inp = nn.Linear(2 * j, u)
        self.blocks = nn.ModuleList(
            _ResidualBlock(u, cfg.dropout) for _ in range(cfg.lifter_blocks)
        )
        self.out = nn.Linear(u, j)
        self.act = nn.ReLU()
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        """y: (B, J, 2) -> (B, J) unbounded depth offsets."""
        h = self.act(self.inp(y.reshape(y.shape[0], -1)))
        for block in self.blocks:
            h = block(h)
        return self.out(h)


class SkeletonDiscriminator(nn.Module):
    """4-layer strided convolutional real/fake classifier; raw logits."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        c = cfg.base_channels
        self.conv1 = _conv(1, c, stride=2)
        self.conv2 = _conv(c, 2 * c, stride=2)
        self.conv3 = _conv(2 * c, 4 * c, stride=2)
        self.conv4 = _conv(4 * c, 4 * c, stride=2)
        side = cfg.image_size // 16
        self.fc = nn.Linear(4 * c * side * side, 1)
        self.act = nn.LeakyReLU(0.2)
        # Keep fresh-init logits near zero (scores near chance).
        with torch.no_grad():
            self.fc.weight.mul_(0.1)
            self.fc.bias.zero_()

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        """img: (B, 1, H, W) -> (B,) logits."""
        h = self.act(self.conv1(img))
        h = self.act(self.conv2(h))
        h = self.act(self.conv3(h))
        h = self.act(self.conv4(h))
        return self.fc(h.reshape(h.shape[0], -1)).squeeze(-1)


class ModelParams:
    """Container for the four networks plus their construction context."""

    def __init__(self, cfg: NetworkConfig, topology: SkeletonTopology | None = None,
                 seed: int = 0):
        if topology is None:
            topology = default_topology()
        if topology.num_joints != cfg.num_joints:
            raise SchemaMismatchError("config num_joints does not match topology")
        self.config = cfg
        self.topology = topology
        self.topology_hash = topology.content_hash()
        torch.manual_seed(seed)
        self.image_to_skeleton = ImageToSkeleton(cfg)
        self.skeleton_to_pose = SkeletonToPose(cfg)
        self.lifter = PoseLifter(cfg)
        self.discriminator = SkeletonDiscriminator(cfg)
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise ConfigurationError(f"non-finite init in {name}")

    def modules(self) -> dict:
        return {
            "image_to_skeleton": self.image_to_skeleton,
            "skeleton_to_pose": self.skeleton_to_pose,
            "lifter": self.lifter,
            "discriminator": self.discriminator,
        }

    def named_parameters(self):
        for mod_name, module in self.modules().items():
            for p_name, p in module.named_parameters():
                yield f"{mod_name}.{p_name}", p

    def generator_parameters(self):
        for name, module in self.modules().items():
            if name != "discriminator":
                yield from module.parameters()

    def discriminator_parameters(self):
        return self.discriminator.parameters()

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for _, p in self.named_parameters())

    def eval(self):
        for m in self.modules().values():
            m.eval()
        return self

    def train(self):
        for m in self.modules().values():
            m.train()
        return self

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, p in sorted(self.named_parameters()):
            digest.update(name.encode())
            digest.update(p.detach().cpu().numpy().tobytes())
        return digest.hexdigest()

    def state_dict(self) -> dict:
        return {name: m.state_dict() for name, m in self.modules().items()}

    def load_state_dict(self, state: dict):
        for name, m in self.modules().items():
            m.load_state_dict(state[name])


# ---------------------------------------------------------------------------
# Functional forward surfaces (channel-last, batch-first)

def _image_batch(x, cfg: NetworkConfig) -> torch.Tensor:
    """Accept (B, H, W), (B, H, W, C) or (B, C, H, W); return (B, C, H, W)."""
    if not isinstance(x, torch.Tensor):
        arr = np.asarray(x)
        if not arr.flags.writeable:
            arr = arr.copy()
        x = torch.as_tensor(arr, dtype=torch.float32)
    size = cfg.image_size
    if x.dim() == 3:
        x = x.unsqueeze(1)  # (B, H, W) -> (B, 1, H, W)
    if x.dim() != 4:
        raise SchemaMismatchError(f"expected a 3D/4D image batch, got {tuple(x.shape)}")
    if x.shape[1] == size and x.shape[2] == size:
        x = x.permute(0, 3, 1, 2)  # channel-last -> channel-first
    if x.shape[-2] != size or x.shape[-1] != size:
        raise SchemaMismatchError(
            f"expected {size}x{size} images, got {tuple(x.shape)}"
        )
    return x


def phi_forward(x, params: ModelParams) -> torch.Tensor:
    """Image batch -> skeleton-image batch (B, H, W, 1) in [0,1]."""
    inp = _image_batch(x, params.config)
    out = params.image_to_skeleton(inp.to(next(params.image_to_skeleton.parameters()).dtype))
    return out.permute(0, 2, 3, 1)


def omega_forward(s, params: ModelParams) -> torch.Tensor:
    """Skeleton-image batch -> (B, J, 2) coordinates in (-1, 1)."""
    inp = _image_batch(s, params.config)
    return params.skeleton_to_pose(inp.to(next(params.skeleton_to_pose.parameters()).dtype))


def lambda_forward(y, params: ModelParams) -> torch.Tensor:
    """2D pose batch (B, J, 2) -> depth offsets (B, J)."""
    if not isinstance(y, torch.Tensor):
        y = torch.as_tensor(np.asarray(y), dtype=torch.float32)
    if y.dim() != 3 or y.shape[1] != params.config.num_joints or y.shape[2] != 2:
        raise SchemaMismatchError(f"expected (B, J, 2) poses, got {tuple(y.shape)}")
    return params.lifter(y.to(next(params.lifter.parameters()).dtype))


def discriminator_forward(img, params: ModelParams) -> torch.Tensor:
    """Skeleton-image batch -> (B,) logits."""
    inp = _image_batch(img, params.config)
    return params.discriminator(inp.to(next(params.discriminator.parameters()).dtype))


# ---------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(path, params: ModelParams, extra: dict | None = None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "topology_hash": params.topology_hash,
        "topology": params.topology.to_dict(),
        "network_config": asdict(params.config),
        "state": params.state_dict(),
        "extra": extra or {},
    }
    try:
        torch.save(payload, path)
    except OSError as e:
        raise CheckpointError(f"failed to write checkpoint: {e}") from e


def load_checkpoint(path, topology: SkeletonTopology | None = None) -> tuple[ModelParams, dict]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError) as e:
        raise CheckpointError(f"failed to read checkpoint: {e}") from e
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unknown checkpoint version: {payload.get('version')!r}")
    ckpt_topology = SkeletonTopology.from_dict(payload["topology"])
    if topology is not None and topology.content_hash() != payload["topology_hash"]:
        raise CheckpointError("checkpoint topology hash does not match the requested topology")
    cfg = NetworkConfig(**payload["network_config"])
    params = ModelParams(cfg, ckpt_topology)
    params.load_state_dict(payload["state"])
    return params, payload.get("extra", {})
