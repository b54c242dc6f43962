"""Calibration run for the closed-loop self-supervision experiment.

Generates the desk-scale dataset (6000 train images, 2000-pose prior,
300 eval scenes), trains with the frozen desk recipe, and reports the
PCK-vs-frozen-init factor and the PA-MPJPE improvement over the planar
(zero-depth) baseline at several step counts. The numbers printed by this
script are the ones recorded in the acceptance-test fixture.

Desk recipe (see the decisions ledger for the calibration history):
  32x32 images, gamma=150, batch 16, base_channels 16, lifter 256x2,
  geometry cycle on a detached pose (trains the lifter only) with an
  asymmetric elevation range to pin the depth sign.
"""
import sys
import time

import numpy as np

from quadpose import evaluation as ev
from quadpose import geometry as geo
from quadpose import synthetic as syn
from quadpose import training as tr
from quadpose.networks import NetworkConfig

N_TRAIN = int(sys.argv[1]) if len(sys.argv) > 1 else 6000
N_PRIOR = 2000
N_EVAL = 300
STEPS = int(sys.argv[2]) if len(sys.argv) > 2 else 8000
SIZE = 32
GAMMA = 150.0

t0 = time.time()
params = syn.QuadrupedParams()
streams = syn._seed_streams(123)
prior = syn.build_prior(N_PRIOR, params, streams["prior"])
imgs = syn.build_train_images(N_TRAIN, params, streams["train"], image_size=SIZE, gamma=GAMMA)
scenes = syn.build_eval_set(N_EVAL, params, streams["eval"], image_size=SIZE, gamma=GAMMA)
print(f"data gen: {time.time()-t0:.1f}s")

cfg = tr.TrainConfig(steps=STEPS, batch_size=16, gamma=GAMMA, seed=7,
                     detach_gc_pose=True,
                     elevation_range=(-0.17, 0.79),
                     network=NetworkConfig(image_size=SIZE, base_channels=16,
                                           lifter_units=256, lifter_blocks=2))
state = tr.TrainState(cfg)
topo = state.topology


def metrics(state):
    res = ev.evaluate_scenes(state.params, scenes)
    # planar baseline: same predicted 2D, zero depth offsets
    pa_planar = []
    for p2, scene in zip(res["pred2d"], scenes):
        v_planar = geo.lift(p2, np.zeros(p2.shape[0])).numpy()
        gt_cam = scene.camera_frame_pose3d().coords
        pa_planar.append(ev.pa_mpjpe(v_planar, gt_cam))
    return res["pck_report"].mean_rate, res["pa_mpjpe"], float(np.mean(pa_planar))


pck0, pa0, pa_planar0 = metrics(state)
print(f"init: PCK {pck0:.2f}  PA {pa0:.4f}  PA_planar {pa_planar0:.4f}")

prior_arr = prior.as_array().astype(np.float32)
t0 = time.time()
for i in range(STEPS):
    idx = state.data_rng.integers(0, N_TRAIN, size=cfg.batch_size)
    pidx = state.data_rng.integers(0, N_PRIOR, size=cfg.batch_size)
    tr.train_step(state, imgs[idx], prior_arr[pidx], cfg)
    if (i + 1) % 1000 == 0:
        el = time.time() - t0
        pck, pa, pap = metrics(state)
        m = state.last_metrics
        print(f"step {i+1} ({el:.0f}s, {el/(i+1):.2f}s/step): PCK {pck:.2f} (x{pck/max(pck0,1e-9):.1f})  "
              f"PA {pa:.4f} vs planar {pap:.4f} (impr {100*(1-pa/pap):.1f}%)  "
              f"omega_pose {m['omega_pose']:.3f} gc {m['gc']:.4f} g_adv {m['g_adv']:.3f} d {m['d_loss']:.3f}")
