"""Small-scale diagnostic for the closed-loop experiment.

Trains at 32px for a short budget and reports, separately:
  - PCK of Omega on clean renders of the eval ground-truth poses (skips Phi)
  - PCK of the full Phi->Omega path on eval images
  - mean |Phi(x) - clean render| to see whether Phi denoises at all
Variants are selected by CLI args: steps, disc lr scale, w_omega.
"""
import sys, time
import numpy as np
import torch
from quadpose import synthetic as syn, training as tr, evaluation as ev, renderer as rnd
from quadpose.networks import NetworkConfig

STEPS = int(sys.argv[1]) if len(sys.argv) > 1 else 600
LR_D = float(sys.argv[2]) if len(sys.argv) > 2 else 2e-4
W_OMEGA = float(sys.argv[3]) if len(sys.argv) > 3 else 1.0
GC_WARMUP = int(sys.argv[4]) if len(sys.argv) > 4 else 0  # steps with w_gc=0
DETACH_GC = bool(int(sys.argv[5])) if len(sys.argv) > 5 else False
SIZE, GAMMA = 32, 150.0
N_TRAIN, N_PRIOR, N_EVAL = 1200, 400, 60

streams = syn._seed_streams(123)
params = syn.QuadrupedParams()
prior = syn.build_prior(N_PRIOR, params, streams["prior"])
imgs = syn.build_train_images(N_TRAIN, params, streams["train"], image_size=SIZE, gamma=GAMMA)
scenes = syn.build_eval_set(N_EVAL, params, streams["eval"], image_size=SIZE, gamma=GAMMA)
topo = None

cfg = tr.TrainConfig(steps=STEPS, batch_size=16, gamma=GAMMA, seed=7,
                     lr_discriminator=LR_D, w_omega=W_OMEGA,
                     detach_gc_pose=DETACH_GC,
                     network=NetworkConfig(image_size=SIZE, base_channels=16,
                                           lifter_units=256, lifter_blocks=2))
state = tr.TrainState(cfg)
topo = state.topology
prior_arr = prior.as_array().astype(np.float32)

gt_poses = np.stack([s.gt_pose2d.coords for s in scenes])
clean_renders = rnd.render(gt_poses, topo, GAMMA, SIZE, SIZE).numpy().astype(np.float32)
eval_imgs = np.stack([s.image for s in scenes]).astype(np.float32)


def report(tag):
    with torch.no_grad():
        # Omega alone on clean gt renders
        y_clean = state.params.skeleton_to_pose(
            torch.as_tensor(clean_renders).unsqueeze(1)).numpy()
        # full path
        s_out = state.params.image_to_skeleton(torch.as_tensor(eval_imgs).unsqueeze(1))
        y_full = state.params.skeleton_to_pose(s_out).numpy()
        phi_err = float((s_out.squeeze(1).numpy() - clean_renders).__abs__().mean())
    def mean_pck(preds):
        r = ev.pck_report([ev.subset_coords(p, topo) for p in preds],
                          [ev.subset_coords(g, topo) for g in gt_poses], topology=topo)
        return r.mean_rate
    res = ev.evaluate_scenes(state.params, scenes)
    pa_planar, pa_refl, corrs = [], [], []
    from quadpose import geometry as geo
    for p2, p3, scene in zip(res["pred2d"], res["pred3d"], scenes):
        v_planar = geo.lift(p2, np.zeros(p2.shape[0])).numpy()
        gt_cam = scene.camera_frame_pose3d().coords
        pa_planar.append(ev.pa_mpjpe(v_planar, gt_cam))
        # PA with reflections allowed: flip pred depth, take the better fit
        flipped = p3.copy()
        flipped[:, 2] = 2 * flipped[:, 2].mean() - flipped[:, 2]
        pa_refl.append(min(ev.pa_mpjpe(p3, gt_cam), ev.pa_mpjpe(flipped, gt_cam)))
        # relief correlation: predicted z-offset vs gt z-offset (centered)
        pz = p3[:, 2] - p3[:, 2].mean()
        gz = gt_cam[:, 2] - gt_cam[:, 2].mean()
        denom = np.linalg.norm(pz) * np.linalg.norm(gz)
        corrs.append(float(pz @ gz / denom) if denom > 1e-12 else 0.0)
    pap = float(np.mean(pa_planar))
    parefl = float(np.mean(pa_refl))
    zcorr = float(np.mean(corrs))
    m = state.last_metrics or {}
    print(f"{tag}: PCK(omega|clean)={mean_pck(y_clean):.1f} PCK(full)={mean_pck(y_full):.1f} "
          f"phi_err={phi_err:.4f} "
          f"PA={res['pa_mpjpe']:.4f} vs planar {pap:.4f} (impr {100*(1-res['pa_mpjpe']/pap):.1f}%) "
          f"PA_refl={parefl:.4f} zcorr={zcorr:+.2f} "
          f"omega_pose={m.get('omega_pose', float('nan')):.3f} "
          f"gc={m.get('gc', float('nan')):.4f} "
          f"g_adv={m.get('g_adv', float('nan')):.2f} d={m.get('d_loss', float('nan')):.3f}")


report("init")
t0 = time.time()
from dataclasses import replace
warm_cfg = replace(cfg, w_gc=0.0)
for i in range(STEPS):
    idx = state.data_rng.integers(0, N_TRAIN, size=cfg.batch_size)
    pidx = state.data_rng.integers(0, N_PRIOR, size=cfg.batch_size)
    step_cfg = warm_cfg if i < GC_WARMUP else cfg
    tr.train_step(state, imgs[idx], prior_arr[pidx], step_cfg)
    if (i + 1) % 500 == 0:
        report(f"step {i+1} ({time.time()-t0:.0f}s)")
