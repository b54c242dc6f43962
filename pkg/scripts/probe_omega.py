"""Supervised accuracy ceiling for the skeleton-image-to-pose network.

Trains Omega alone on rendered prior poses (the same self-generated pairs the
mapping loss uses) and reports held-out per-coordinate RMS error and PCK on
clean renders. This bounds how small the pipeline's systematic 2D error can
get at a given resolution/architecture.

Usage: probe_omega.py [STEPS] [STRIDE] [BASE_CHANNELS] [SIZE]
"""
import sys
import time

import numpy as np
import torch

from quadpose import evaluation as ev
from quadpose import renderer as rnd
from quadpose import synthetic as syn
from quadpose.networks import NetworkConfig, SkeletonToPose

STEPS = int(sys.argv[1]) if len(sys.argv) > 1 else 8000
STRIDE = int(sys.argv[2]) if len(sys.argv) > 2 else 4
BASE = int(sys.argv[3]) if len(sys.argv) > 3 else 16
SIZE = int(sys.argv[4]) if len(sys.argv) > 4 else 32
GAMMA = 150.0
BATCH = 16
N_TRAIN, N_EVAL = 2000, 60

torch.manual_seed(11)
rng = np.random.default_rng(11)
params = syn.QuadrupedParams()
streams = syn._seed_streams(123)
prior = syn.build_prior(N_TRAIN, params, streams["prior"]).as_array()
eval_scenes = syn.build_eval_set(N_EVAL, params, streams["eval"],
                                 image_size=SIZE, gamma=GAMMA)
topo = eval_scenes[0].gt_pose2d.topology if hasattr(eval_scenes[0].gt_pose2d, "topology") else None
from quadpose.skeleton import default_topology
topo = default_topology()

eval_y = np.stack([s.gt_pose2d.coords for s in eval_scenes])
eval_renders = rnd.render(eval_y, topo, GAMMA, SIZE, SIZE).numpy().astype(np.float32)
train_renders = rnd.render(prior, topo, GAMMA, SIZE, SIZE).numpy().astype(np.float32)
train_y = prior.astype(np.float32)

cfg = NetworkConfig(image_size=SIZE, base_channels=BASE, heatmap_stride=STRIDE)
omega = SkeletonToPose(cfg)
opt = torch.optim.Adam(omega.parameters(), lr=2e-4, betas=(0.5, 0.999))


def report(tag):
    omega.eval()
    with torch.no_grad():
        pred = omega(torch.as_tensor(eval_renders).unsqueeze(1)).numpy()
    omega.train()
    rms = float(np.sqrt(np.mean((pred - eval_y) ** 2)))
    rep = ev.pck_report([ev.subset_coords(p, topo) for p in pred],
                        [ev.subset_coords(g, topo) for g in eval_y], topology=topo)
    print(f"{tag}: rms/coord={rms:.4f} pck={rep.mean_rate:.1f}")


report("init")
t0 = time.time()
for i in range(STEPS):
    idx = rng.integers(0, N_TRAIN, size=BATCH)
    x = torch.as_tensor(train_renders[idx]).unsqueeze(1)
    y = torch.as_tensor(train_y[idx])
    pred = omega(x)
    loss = ((pred - y) ** 2).sum(dim=(-1, -2)).mean()
    opt.zero_grad()
    loss.backward()
    opt.step()
    if (i + 1) % 2000 == 0:
        report(f"step {i + 1} ({time.time() - t0:.0f}s) loss={float(loss.detach()):.4f}")
