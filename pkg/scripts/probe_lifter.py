"""Isolated lifting probe: can the rotation/projection cycle alone recover
correctly signed depth relief from CLEAN 2D poses (no images, no GAN)?

Trains only the fully connected lifter with the geometry-consistency loss on
ground-truth 2D projections, then reports relief correlation and PA-MPJPE
against the zero-depth planar baseline on held-out poses.

Usage: probe_lifter.py [STEPS] [LR] [NOISE_SIGMA] [SEED]
"""
import sys
import time

import numpy as np
import torch

from quadpose import evaluation as ev
from quadpose import geometry as geo
from quadpose import synthetic as syn
from quadpose.networks import NetworkConfig, PoseLifter

STEPS = int(sys.argv[1]) if len(sys.argv) > 1 else 4000
LR = float(sys.argv[2]) if len(sys.argv) > 2 else 1e-4
SIGMA = float(sys.argv[3]) if len(sys.argv) > 3 else 0.0
SEED = int(sys.argv[4]) if len(sys.argv) > 4 else 7
WARP = float(sys.argv[5]) if len(sys.argv) > 5 else 0.0  # systematic-warp RMS
ELEV_LO = float(sys.argv[6]) if len(sys.argv) > 6 else geo.DEFAULT_ELEVATION_RANGE[0]
ELEV_HI = float(sys.argv[7]) if len(sys.argv) > 7 else geo.DEFAULT_ELEVATION_RANGE[1]
WARP_TRAIN = bool(int(sys.argv[8])) if len(sys.argv) > 8 else True
BATCH = 32
N_TRAIN, N_EVAL = 1200, 60

torch.manual_seed(SEED)
rng = np.random.default_rng(SEED)
params = syn.QuadrupedParams()
streams = syn._seed_streams(123)
train_scenes = syn.build_eval_set(N_TRAIN, params, streams["train"],
                                  image_size=8, gamma=150.0)
eval_scenes = syn.build_eval_set(N_EVAL, params, streams["eval"],
                                 image_size=8, gamma=150.0)
train_y = np.stack([s.gt_pose2d.coords for s in train_scenes]).astype(np.float32)
eval_y = np.stack([s.gt_pose2d.coords for s in eval_scenes])
eval_gt3d = np.stack([s.camera_frame_pose3d().coords for s in eval_scenes])

if WARP > 0:
    # fixed smooth random warp of the pose manifold, emulating a systematic
    # (pose-dependent, not iid) 2D prediction error of the given RMS
    J = train_y.shape[1]
    torch.manual_seed(SEED + 999)
    warp_net = torch.nn.Sequential(
        torch.nn.Linear(2 * J, 64), torch.nn.Tanh(),
        torch.nn.Linear(64, 2 * J)).double()

    def warp(arr):
        with torch.no_grad():
            t = torch.as_tensor(np.asarray(arr, dtype=np.float64))
            flat = t.reshape(t.shape[0], -1)
            g = warp_net(flat)
            g = g / g.pow(2).mean().sqrt() * WARP
            return (flat + g).reshape(t.shape).numpy()

    # warp only the eval poses (emulating systematic prediction error at
    # inference); training uses the clean manifold + iid noise, as when the
    # cycle is trained on prior poses rather than predictions
    eval_y = warp(eval_y)
    if WARP_TRAIN:
        train_y = warp(train_y).astype(np.float32)

cfg = NetworkConfig(lifter_units=256, lifter_blocks=2)
lifter = PoseLifter(cfg).double()
opt = torch.optim.Adam(lifter.parameters(), lr=LR, betas=(0.5, 0.999))


def report(tag):
    with torch.no_grad():
        d = lifter(torch.as_tensor(eval_y)).numpy()
    pa, pap, corrs = [], [], []
    for y, dz, gt in zip(eval_y, d, eval_gt3d):
        v = geo.lift(y, dz).numpy()
        v0 = geo.lift(y, np.zeros_like(dz)).numpy()
        pa.append(ev.pa_mpjpe(v, gt))
        pap.append(ev.pa_mpjpe(v0, gt))
        pz, gz = v[:, 2] - v[:, 2].mean(), gt[:, 2] - gt[:, 2].mean()
        den = np.linalg.norm(pz) * np.linalg.norm(gz)
        corrs.append(pz @ gz / den if den > 1e-12 else 0.0)
    print(f"{tag}: PA={np.mean(pa):.4f} planar={np.mean(pap):.4f} "
          f"(impr {100 * (1 - np.mean(pa) / np.mean(pap)):.1f}%) "
          f"zcorr={np.mean(corrs):+.3f} relief_std={np.std(d):.3f}")


report("init")
t0 = time.time()
for i in range(STEPS):
    idx = rng.integers(0, N_TRAIN, size=BATCH)
    y = torch.as_tensor(train_y[idx], dtype=torch.float64)
    if SIGMA > 0:
        y = y + SIGMA * torch.randn_like(y)
    R = torch.stack([
        torch.as_tensor(geo.sample_rotation(
            rng, elevation_range=(ELEV_LO, ELEV_HI)))
        for _ in range(BATCH)
    ])
    cyc = geo.consistency_cycle(y, lifter, R)
    loss = geo.loss_gc(cyc)
    opt.zero_grad()
    loss.backward()
    opt.step()
    if (i + 1) % 500 == 0:
        report(f"step {i + 1} ({time.time() - t0:.0f}s) gc={float(loss):.4f}")
