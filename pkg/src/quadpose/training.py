"""Adversarial self-supervised training loop.

Generator group (image->skeleton, skeleton->pose, lifter) minimizes
  w_adv * adversarial + w_gc * geometry-consistency + w_omega * mapping
while the discriminator is trained separately on real prior renders vs
predicted skeleton images, alternating one update each per step.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import geometry, renderer
from .errors import (
    CheckpointError,
    ConfigurationError,
    DivergedTrainingError,
    InsufficientBatchError,
    SchemaMismatchError,
)
from .networks import ModelParams, NetworkConfig, save_checkpoint
from .skeleton import DEFAULT_SCENE_DEPTH, SkeletonTopology, default_topology

TRAIN_STATE_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 16
    lr_generator: float = 2e-4
    lr_discriminator: float = 2e-4
    # Loss weights; the mapping loss's internal balance is lambda_coeff.
    w_adv: float = 1.0
    w_gc: float = 1.0
    w_omega: float = 1.0
    lambda_coeff: float = 1.0
    scene_depth: float = DEFAULT_SCENE_DEPTH
    z_min: float = geometry.DEFAULT_Z_MIN
    azimuth_range: tuple = geometry.DEFAULT_AZIMUTH_RANGE
    elevation_range: tuple = geometry.DEFAULT_ELEVATION_RANGE
    gamma: float = renderer.DEFAULT_GAMMA
    seed: int = 0
    checkpoint_every: int = 500
    eval_every: int = 0          # 0 disables mid-training PCK evaluation
    eval_slice: int = 32
    disc_updates: int = 1
    detach_reconstruction: bool = False
    # Run the consistency cycle on a detached copy of the predicted pose so
    # the cycle trains only the lifter. Without this, the convolutional
    # stages can absorb the cycle constraint (closing the loop by warping
    # the 2D predictions) and the lifter never learns real depth.
    detach_gc_pose: bool = False
    # Post-training lifter refinement: freeze the convolutional stages and
    # continue training only the lifter with the consistency cycle on their
    # (precomputed) 2D predictions. The lifter converges far more slowly
    # than the image stages; these extra steps cost no convolutions.
    lifter_refine_steps: int = 0
    lifter_refine_lr: float = 1e-4
    lifter_refine_batch: int = 32
    lifter_refine_noise: float = 0.02
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        if self.lambda_coeff < 0:
            raise ConfigurationError("lambda_coeff must be >= 0")
        for name in ("w_adv", "w_gc", "w_omega"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.batch_size < 2:
            raise ConfigurationError(
                "batch_size must be >= 2 (pairwise 3D loss needs two samples)"
            )
        if self.lifter_refine_steps < 0:
            raise ConfigurationError("lifter_refine_steps must be >= 0")
        if self.lifter_refine_noise < 0:
            raise ConfigurationError("lifter_refine_noise must be >= 0")
        if self.lifter_refine_batch < 2:
            raise ConfigurationError(
                "lifter_refine_batch must be >= 2 (pairwise 3D loss)"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["azimuth_range"] = list(self.azimuth_range)
        d["elevation_range"] = list(self.elevation_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "network" in d and isinstance(d["network"], dict):
            d["network"] = NetworkConfig(**d["network"])
        for key in ("azimuth_range", "elevation_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


class TrainState:
    """Mutable training state: step, models, optimizers, rng streams."""

    def __init__(self, config: TrainConfig, topology: SkeletonTopology | None = None):
        self.config = config
        self.topology = topology or default_topology()
        self.params = ModelParams(config.network, self.topology, seed=config.seed)
        self.opt_gen = torch.optim.Adam(
            list(self.params.generator_parameters()), lr=config.lr_generator,
            betas=(0.5, 0.999))
        self.opt_disc = torch.optim.Adam(
            list(self.params.discriminator_parameters()), lr=config.lr_discriminator,
            betas=(0.5, 0.999))
        ss = np.random.SeedSequence(config.seed)
        data_ss, rot_ss = ss.spawn(2)
        self.data_rng = np.random.Generator(np.random.PCG64(data_ss))
        self.rotation_rng = np.random.Generator(np.random.PCG64(rot_ss))
        self.step = 0
        self.last_metrics: dict = {}

    def state_dict(self) -> dict:
        return {
            "version": TRAIN_STATE_VERSION,
            "step": self.step,
            "config": self.config.to_dict(),
            "topology": self.topology.to_dict(),
            "model": self.params.state_dict(),
            "opt_gen": self.opt_gen.state_dict(),
            "opt_disc": self.opt_disc.state_dict(),
            "data_rng": self.data_rng.bit_generator.state,
            "rotation_rng": self.rotation_rng.bit_generator.state,
            "last_metrics": self.last_metrics,
        }

    def load_state_dict(self, d: dict):
        if d.get("version") != TRAIN_STATE_VERSION:
            raise CheckpointError(f"unknown train-state version: {d.get('version')!r}")
        self.step = int(d["step"])
        self.params.load_state_dict(d["model"])
        self.opt_gen.load_state_dict(d["opt_gen"])
        self.opt_disc.load_state_dict(d["opt_disc"])
        self.data_rng.bit_generator.state = d["data_rng"]
        self.rotation_rng.bit_generator.state = d["rotation_rng"]
        self.last_metrics = dict(d.get("last_metrics", {}))

    def save(self, path):
        try:
            torch.save(self.state_dict(), path)
        except OSError as e:
            raise CheckpointError(f"failed to write train state: {e}") from e

    @classmethod
    def load(cls, path) -> "TrainState":
        payload = torch.load(path, map_location="cpu", weights_only=False)
        config = TrainConfig.from_dict(payload["config"])
        topology = SkeletonTopology.from_dict(payload["topology"])
        state = cls(config, topology)
        state.load_state_dict(payload)
        return state


# ---------------------------------------------------------------------------
# Losses

def loss_discriminator(real_images, fake_images, discriminator):
    """GAN losses over real prior renders and predicted skeleton images.

    Returns (d_loss, g_adv_loss). ``fake_images`` is detached inside the
    discriminator loss; the generator term is the non-saturating form.
    """
    if real_images.shape[0] != fake_images.shape[0]:
        raise SchemaMismatchError(
            f"batch mismatch: {real_images.shape[0]} real vs {fake_images.shape[0]} fake"
        )
    real_logits = discriminator(real_images)
    fake_logits_d = discriminator(fake_images.detach())
    d_loss = -(F.logsigmoid(real_logits).mean()
               + F.logsigmoid(-fake_logits_d).mean())
    fake_logits_g = discriminator(fake_images)
    g_adv = -F.logsigmoid(fake_logits_g).mean()
    return d_loss, g_adv


def loss_omega(prior_poses, y_pred, s_pred, omega_fn, render_fn,
               lambda_coeff: float, detach_reconstruction: bool = False):
    """Mapping loss: keypoints-on-prior-renders + skeleton reconstruction.

    First term: the pose network applied to freshly rendered prior poses
    must recover those poses (per-sample sum over joints, batch mean).
    Second term: re-rendering the predicted pose must reproduce the
    predicted skeleton image (per-sample pixel mean, batch mean), scaled
    by ``lambda_coeff``.
    """
    rendered_prior = render_fn(prior_poses)
    recovered = omega_fn(rendered_prior)
    pose_term = ((recovered - prior_poses) ** 2).sum(dim=(-1, -2)).mean()
    target = s_pred.detach() if detach_reconstruction else s_pred
    rerendered = render_fn(y_pred)
    recon_term = ((rerendered - target) ** 2).mean(dim=(-1, -2)).mean()
    return pose_term + lambda_coeff * recon_term, pose_term, recon_term


def _sample_rotation_batch(rng: np.random.Generator, b: int, config: TrainConfig,
                           dtype=torch.float32) -> torch.Tensor:
    mats = [geometry.sample_rotation(rng, config.azimuth_range,
                                     config.elevation_range, dtype=dtype)
            for _ in range(b)]
    return torch.stack(mats)


def total_loss(batch, params: ModelParams, config: TrainConfig,
               rotations: torch.Tensor | None = None,
               rotation_rng: np.random.Generator | None = None):
    """Generator objective and its per-term breakdown.

    ``batch`` maps "images" to a (B, 1, H, W) tensor and "prior_poses" to
    a (B, J, 2) tensor. Rotations may be passed explicitly or sampled
    from ``rotation_rng``.
    """
    images = batch["images"]
    prior_poses = batch["prior_poses"]
    b = images.shape[0]
    if b < 2:
        raise InsufficientBatchError("training batch must be >= 2")
    if rotations is None:
        if rotation_rng is None:
            raise ConfigurationError("need either rotations or rotation_rng")
        rotations = _sample_rotation_batch(rotation_rng, b, config, images.dtype)

    topology = params.topology
    s = params.image_to_skeleton(images)               # (B, 1, H, W)
    y = params.skeleton_to_pose(s)                     # (B, J, 2)

    def lifter(pose2d):
        return params.lifter(pose2d)

    cycle_input = y.detach() if config.detach_gc_pose else y
    cycle = geometry.consistency_cycle(
        cycle_input, lifter, rotations,
        pivot=geometry.default_pivot(config.scene_depth, dtype=y.dtype),
        scene_depth=config.scene_depth, z_min=config.z_min)
    l2d = geometry.loss_2d(cycle.input2d, cycle.reprojected2d)
    l3d = geometry.loss_3d(cycle.pose3d, cycle.unrotated3d)
    lr3d = geometry.loss_r3d(cycle.rotated3d, cycle.relifted3d)
    gc = l2d + l3d + lr3d

    size = config.network.image_size

    def render_fn(poses):
        return renderer.render(poses, topology, config.gamma, size, size)

    def omega_fn(imgs):
        return params.skeleton_to_pose(imgs.unsqueeze(1).to(s.dtype))

    g_adv = -F.logsigmoid(params.discriminator(s)).mean()
    omega, omega_pose, omega_recon = loss_omega(
        prior_poses, y, s.squeeze(1), omega_fn, render_fn,
        config.lambda_coeff, config.detach_reconstruction)

    total = config.w_adv * g_adv + config.w_gc * gc + config.w_omega * omega
    breakdown = {
        "g_adv": float(g_adv.detach()),
        "l2d": float(l2d.detach()),
        "l3d": float(l3d.detach()),
        "lr3d": float(lr3d.detach()),
        "gc": float(gc.detach()),
        "omega": float(omega.detach()),
        "omega_pose": float(omega_pose.detach()),
        "omega_recon": float(omega_recon.detach()),
    }
    # Recorded total is recomposed from the logged terms so the logged
    # breakdown sums to it exactly.
    breakdown["total"] = (config.w_adv * breakdown["g_adv"]
                          + config.w_gc * breakdown["gc"]
                          + config.w_omega * breakdown["omega"])
    return total, breakdown, {"s": s, "y": y, "cycle": cycle}


def train_step(state: TrainState, image_batch, prior_batch,
               config: TrainConfig | None = None) -> TrainState:
    """One discriminator update followed by one generator-group update."""
    config = config or state.config
    params = state.params
    images = _to_image_tensor(image_batch)
    prior_poses = _to_pose_tensor(prior_batch)
    size = config.network.image_size
    topology = params.topology

    # Discriminator phase: real prior renders vs detached predictions.
    d_loss_value = 0.0
    for _ in range(config.disc_updates):
        s = params.image_to_skeleton(images)
        real = renderer.render(prior_poses, topology, config.gamma, size, size)
        real = real.unsqueeze(1).to(s.dtype)
        d_loss, _ = loss_discriminator(real, s, params.discriminator)
        state.opt_disc.zero_grad()
        d_loss.backward()
        state.opt_disc.step()
        d_loss_value = float(d_loss.detach())

    # Generator phase.
    total, breakdown, _ = total_loss(
        {"images": images, "prior_poses": prior_poses}, params, config,
        rotation_rng=state.rotation_rng)
    state.opt_gen.zero_grad()
    total.backward()
    state.opt_gen.step()

    breakdown["d_loss"] = d_loss_value
    if not all(math.isfinite(v) for v in breakdown.values()):
        raise DivergedTrainingError(
            f"non-finite loss at step {state.step}", breakdown)
    state.step += 1
    state.last_metrics = breakdown
    return state


def _to_image_tensor(images) -> torch.Tensor:
    if isinstance(images, torch.Tensor):
        t = images.to(torch.float32)
    else:
        arr = np.asarray(images, dtype=np.float32)
        t = torch.as_tensor(arr)
    if t.dim() == 3:
        t = t.unsqueeze(1)
    return t


def _to_pose_tensor(poses) -> torch.Tensor:
    if isinstance(poses, torch.Tensor):
        return poses.to(torch.float32)
    if hasattr(poses, "as_array"):
        poses = poses.as_array()
    arr = np.asarray(poses, dtype=np.float32)
    return torch.as_tensor(arr)


class MetricsLog:
    """Append-only line-delimited (step, term, value) records."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "a")

    def record(self, step: int, terms: dict):
        for term in sorted(terms):
            self._fh.write(json.dumps(
                {"step": step, "term": term, "value": float(terms[term])}) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def fit(config: TrainConfig, datasets: dict, out_dir,
        resume_from=None) -> dict:
    """Run the full training loop.

    ``datasets`` requires "train_images" (N, H, W array in [0,1]) and
    "prior" (PriorSet or (M, J, 2) array); "eval_scenes" enables periodic
    PCK logging. Writes checkpoints and metrics.jsonl under ``out_dir``;
    returns paths and the final state.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume_from is not None:
        state = TrainState.load(resume_from)
    else:
        state = TrainState(config)
    topology = state.topology

    train_images = np.asarray(datasets["train_images"], dtype=np.float32)
    prior = datasets["prior"]
    prior_arr = prior.as_array() if hasattr(prior, "as_array") else np.asarray(prior)
    prior_arr = prior_arr.astype(np.float32)
    eval_scenes = datasets.get("eval_scenes")

    metrics = MetricsLog(out / "metrics.jsonl")
    ckpt_path = out / "checkpoint.pt"        # model weights, for inference
    state_path = out / "train_state.pt"      # full state, for --resume

    def _write_checkpoints():
        state.save(state_path)
        save_checkpoint(ckpt_path, state.params, extra={"step": state.step})

    try:
        while state.step < config.steps:
            img_idx = state.data_rng.integers(0, train_images.shape[0],
                                              size=config.batch_size)
            prior_idx = state.data_rng.integers(0, prior_arr.shape[0],
                                                size=config.batch_size)
            train_step(state, train_images[img_idx], prior_arr[prior_idx], config)
            terms = dict(state.last_metrics)
            if (eval_scenes and config.eval_every
                    and state.step % config.eval_every == 0):
                terms["pck"] = _validation_pck(state, eval_scenes, config)
            metrics.record(state.step, terms)
            if config.checkpoint_every and state.step % config.checkpoint_every == 0:
                _write_checkpoints()
        if config.lifter_refine_steps > 0:
            _refine_lifter(state, train_images, config, metrics)
        _write_checkpoints()
    finally:
        metrics.close()
    return {
        "checkpoint": ckpt_path,
        "train_state": state_path,
        "metrics": out / "metrics.jsonl",
        "state": state,
    }


def _refine_lifter(state: TrainState, train_images: np.ndarray,
                   config: TrainConfig, metrics: "MetricsLog"):
    """Lifter-only consistency-cycle refinement after the main loop.

    The convolutional stages are frozen and their 2D predictions on the
    training images are computed once; the lifter then trains in float64
    on those fixed poses with iid noise augmentation. Note: resuming a run
    whose main loop already finished re-runs this stage.
    """
    params = state.params
    with torch.no_grad():
        chunks = []
        for start in range(0, train_images.shape[0], 64):
            x = torch.as_tensor(train_images[start:start + 64]).unsqueeze(1)
            pose = params.skeleton_to_pose(params.image_to_skeleton(x))
            chunks.append(pose.to(torch.float64))
        poses = torch.cat(chunks)

    lifter = params.lifter.double()
    opt = torch.optim.Adam(lifter.parameters(), lr=config.lifter_refine_lr,
                           betas=(0.5, 0.999))
    pivot = geometry.default_pivot(config.scene_depth, dtype=torch.float64)
    try:
        for i in range(config.lifter_refine_steps):
            idx = state.data_rng.integers(0, poses.shape[0],
                                          size=config.lifter_refine_batch)
            y = poses[idx]
            if config.lifter_refine_noise > 0:
                noise = state.data_rng.normal(
                    scale=config.lifter_refine_noise, size=tuple(y.shape))
                y = y + torch.as_tensor(noise, dtype=torch.float64)
            rot = _sample_rotation_batch(state.rotation_rng, y.shape[0],
                                         config, torch.float64)
            cycle = geometry.consistency_cycle(
                y, lifter, rot, pivot=pivot,
                scene_depth=config.scene_depth, z_min=config.z_min)
            gc = geometry.loss_gc(cycle)
            opt.zero_grad()
            gc.backward()
            opt.step()
            value = float(gc.detach())
            if not math.isfinite(value):
                raise DivergedTrainingError(
                    f"non-finite refinement loss at step {i + 1}")
            if (i + 1) % 1000 == 0 or i + 1 == config.lifter_refine_steps:
                metrics.record(state.step,
                               {"refine_step": i + 1, "refine_gc": value})
    finally:
        params.lifter.float()


def _validation_pck(state: TrainState, eval_scenes, config: TrainConfig) -> float:
    from . import evaluation

    subset = eval_scenes[: config.eval_slice]
    preds2d, _ = evaluation.predict_poses(state.params, np.stack(
        [s.image for s in subset]), scene_depth=config.scene_depth)
    report = evaluation.pck_report(
        [evaluation.subset_coords(p, state.topology) for p in preds2d],
        [evaluation.subset_coords(s.gt_pose2d.coords, state.topology) for s in subset],
        topology=state.topology)
    return report.mean_rate
