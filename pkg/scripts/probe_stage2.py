"""Two-stage recipe probe for the closed-loop experiment.

Stage 1: joint self-supervised training (discriminator + mapping losses) at
desk scale. Stage 2: freeze the convolutional stages, precompute their 2D
predictions on the training images, and train ONLY the lifter with the
rotation/projection consistency cycle on those frozen predictions (optionally
with iid noise augmentation). Reports relief correlation and PA-MPJPE vs the
planar baseline throughout stage 2.

Usage: probe_stage2.py [STAGE1_STEPS] [STAGE2_STEPS] [NOISE] [ELEV_LO] [ELEV_HI]
"""
import sys
import time

import numpy as np
import torch

from quadpose import evaluation as ev
from quadpose import geometry as geo
from quadpose import synthetic as syn
from quadpose import training as tr
from quadpose.networks import NetworkConfig

S1 = int(sys.argv[1]) if len(sys.argv) > 1 else 8000
S2 = int(sys.argv[2]) if len(sys.argv) > 2 else 60000
NOISE = float(sys.argv[3]) if len(sys.argv) > 3 else 0.02
ELEV_LO = float(sys.argv[4]) if len(sys.argv) > 4 else geo.DEFAULT_ELEVATION_RANGE[0]
ELEV_HI = float(sys.argv[5]) if len(sys.argv) > 5 else geo.DEFAULT_ELEVATION_RANGE[1]
W_GC1 = float(sys.argv[6]) if len(sys.argv) > 6 else 1.0  # stage-1 cycle weight
SIZE, GAMMA = 32, 150.0
N_TRAIN, N_PRIOR, N_EVAL = 1200, 400, 60

quad = syn.QuadrupedParams()
streams = syn._seed_streams(123)
prior = syn.build_prior(N_PRIOR, quad, streams["prior"])
imgs = syn.build_train_images(N_TRAIN, quad, streams["train"],
                              image_size=SIZE, gamma=GAMMA)
scenes = syn.build_eval_set(N_EVAL, quad, streams["eval"],
                            image_size=SIZE, gamma=GAMMA)

cfg = tr.TrainConfig(steps=S1, batch_size=16, gamma=GAMMA, seed=7,
                     detach_gc_pose=True, w_gc=W_GC1,
                     network=NetworkConfig(image_size=SIZE, base_channels=16,
                                           lifter_units=256, lifter_blocks=2))
state = tr.TrainState(cfg)
prior_arr = prior.as_array().astype(np.float32)


def report(tag):
    res = ev.evaluate_scenes(state.params, scenes)
    pa_planar, corrs = [], []
    for p2, p3, scene in zip(res["pred2d"], res["pred3d"], scenes):
        gt = scene.camera_frame_pose3d().coords
        planar = geo.lift(p2, np.zeros(p2.shape[0])).numpy()
        pa_planar.append(ev.pa_mpjpe(planar, gt))
        pz = p3[:, 2] - p3[:, 2].mean()
        gz = gt[:, 2] - gt[:, 2].mean()
        den = np.linalg.norm(pz) * np.linalg.norm(gz)
        corrs.append(pz @ gz / den if den > 1e-12 else 0.0)
    pap = float(np.mean(pa_planar))
    print(f"{tag}: PCK={res['pck_report'].mean_rate:.1f} "
          f"PA={res['pa_mpjpe']:.4f} vs planar {pap:.4f} "
          f"(impr {100 * (1 - res['pa_mpjpe'] / pap):.1f}%) "
          f"zcorr={np.mean(corrs):+.3f}")


t0 = time.time()
for i in range(S1):
    idx = state.data_rng.integers(0, N_TRAIN, size=cfg.batch_size)
    pidx = state.data_rng.integers(0, N_PRIOR, size=cfg.batch_size)
    tr.train_step(state, imgs[idx], prior_arr[pidx], cfg)
    if (i + 1) % 2000 == 0:
        report(f"stage1 step {i + 1} ({time.time() - t0:.0f}s)")

# stage 2: freeze conv stages, precompute predictions, train lifter only
with torch.no_grad():
    chunks = []
    for start in range(0, N_TRAIN, 64):
        x = torch.as_tensor(np.asarray(imgs[start:start + 64],
                                       dtype=np.float32)).unsqueeze(1)
        chunks.append(state.params.skeleton_to_pose(
            state.params.image_to_skeleton(x)).double())
    train_y = torch.cat(chunks)

lifter = state.params.lifter.double()
opt = torch.optim.Adam(lifter.parameters(), lr=1e-4, betas=(0.5, 0.999))
rng = np.random.default_rng(99)
t0 = time.time()
for i in range(S2):
    idx = rng.integers(0, N_TRAIN, size=32)
    y = train_y[idx]
    if NOISE > 0:
        y = y + NOISE * torch.randn_like(y)
    R = torch.stack([
        torch.as_tensor(geo.sample_rotation(
            rng, elevation_range=(ELEV_LO, ELEV_HI)))
        for _ in range(32)
    ])
    cyc = geo.consistency_cycle(y, lifter, R)
    loss = geo.loss_gc(cyc)
    opt.zero_grad()
    loss.backward()
    opt.step()
    if (i + 1) % 4000 == 0:
        state.params.lifter.float()
        report(f"stage2 step {i + 1} ({time.time() - t0:.0f}s) "
               f"gc={float(loss.detach()):.4f}")
        state.params.lifter.double()
