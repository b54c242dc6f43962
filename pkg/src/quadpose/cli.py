"""Command-line entry point.

Subcommands: generate-prior, make-dataset, ingest, train, eval, predict,
plot. Every artifact-producing run writes a reproducibility stamp
(config snapshot, seed, code version) beside its outputs.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import importlib
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import QuadposeError

CONFIG_VERSION = 1
OUTPUT_ROOT_ENV = "QUADPOSE_OUTPUT_ROOT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _resolve_out(path) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def _code_version() -> str:
    try:
        commit = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).parent).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        commit = ""
    return f"{__version__}+{commit}" if commit else __version__


def write_stamp(out_dir, argv, config: dict | None = None, seed=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "stamp.json", "w") as f:
        json.dump({
            "argv": list(argv),
            "config": config or {},
            "seed": seed,
            "code_version": _code_version(),
        }, f, indent=1)


def load_train_config(path=None, overrides: dict | None = None):
    from .training import TrainConfig

    data: dict = {}
    if path:
        with open(path) as f:
            doc = yaml.safe_load(f) or {}
        if doc.get("config_version") != CONFIG_VERSION:
            raise QuadposeError(
                f"unknown config_version: {doc.get('config_version')!r}")
        data = doc.get("train", {})
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return TrainConfig.from_dict(data)


def save_train_config(path, config):
    with open(path, "w") as f:
        yaml.safe_dump({"config_version": CONFIG_VERSION,
                        "train": config.to_dict()}, f, sort_keys=True)


# ---------------------------------------------------------------------------
# Subcommands

def _cmd_generate_prior(args) -> int:
    from . import synthetic

    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(args.seed).spawn(3)[0]))
    prior = synthetic.build_prior(args.n, synthetic.QuadrupedParams(), rng)
    synthetic.save_prior(out, prior)
    write_stamp(out.parent, sys.argv[1:], {"n": args.n}, args.seed)
    print(f"wrote prior of {len(prior)} poses to {out}")
    return 0


def _cmd_make_dataset(args) -> int:
    from . import synthetic

    out = _resolve_out(args.out)
    manifest = synthetic.write_dataset(
        out, n_train=args.n_train, n_eval=args.n_eval, seed=args.seed,
        image_size=args.image_size, gamma=args.gamma)
    write_stamp(out, sys.argv[1:],
                {"n_train": args.n_train, "n_eval": args.n_eval,
                 "image_size": args.image_size, "gamma": args.gamma},
                args.seed)
    print(f"wrote dataset manifest {manifest}")
    return 0


def _load_detector(spec: str):
    from . import ingestion

    if spec == "accept-all":
        return ingestion.accept_all_detector
    if ":" not in spec:
        raise QuadposeError(
            f"detector must be 'accept-all' or 'module:callable', got {spec!r}")
    module_name, attr = spec.split(":", 1)
    module = importlib.import_module(module_name)
    return getattr(module, attr)


def _cmd_ingest(args) -> int:
    from . import ingestion

    out = _resolve_out(args.out)
    detector = _load_detector(args.detector)
    total = 0
    for video in args.videos:
        manifest = ingestion.ingest_video(
            video, detector, out, min_confidence=args.min_confidence,
            size=args.size)
        total += sum(1 for _ in open(manifest))
    write_stamp(out, sys.argv[1:],
                {"min_confidence": args.min_confidence, "size": args.size})
    print(f"stored {total} frames under {out}")
    return 0


def _cmd_train(args) -> int:
    from . import synthetic, training

    out = _resolve_out(args.out)
    config = load_train_config(args.config, {
        "steps": args.steps, "seed": args.seed, "batch_size": args.batch_size,
    })
    data = synthetic.load_dataset(args.data)
    if config.network.image_size != data["meta"]["image_size"]:
        from dataclasses import replace

        config = replace(config, network=replace(
            config.network, image_size=int(data["meta"]["image_size"])))
        print(f"note: network image_size set to {config.network.image_size} "
              "to match the dataset")
    prior = synthetic.import_prior(args.prior)
    write_stamp(out, sys.argv[1:], config.to_dict(), config.seed)
    save_train_config(_resolve_out(args.out) / "config.yaml", config)
    result = training.fit(
        config,
        {"train_images": data["train_images"], "prior": prior,
         "eval_scenes": data["eval_scenes"]},
        out, resume_from=args.resume)
    print(f"trained {result['state'].step} steps; checkpoint {result['checkpoint']}")
    return 0


def _cmd_eval(args) -> int:
    from . import evaluation, synthetic
    from .networks import load_checkpoint

    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = synthetic.load_dataset(args.data)
    params, _ = load_checkpoint(args.checkpoint)
    results = evaluation.evaluate_scenes(params, data["eval_scenes"],
                                         alpha=args.alpha)
    report = results["pck_report"]
    report.save(out / "pck_report.json")
    with open(out / "metrics.json", "w") as f:
        json.dump({"mpjpe": results["mpjpe"], "pa_mpjpe": results["pa_mpjpe"],
                   "pck_mean": report.mean_rate}, f, indent=1)
    table = report.format_table()
    with open(out / "pck_report.txt", "w") as f:
        f.write(table + "\n")
    write_stamp(out, sys.argv[1:], {"alpha": args.alpha})
    print(table)
    print(f"MPJPE {results['mpjpe']:.4f}  PA-MPJPE {results['pa_mpjpe']:.4f}")
    return 0


def _cmd_predict(args) -> int:
    from . import evaluation, renderer
    from .skeleton import pose_to_dict, default_topology

    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    images = np.stack([renderer.load_png(p) for p in args.images])
    pred2d, pred3d = evaluation.predict(args.checkpoint, images)
    topology = default_topology()
    for i, (p2, p3) in enumerate(zip(pred2d, pred3d)):
        payload = pose_to_dict(p2, topology.joint_names)
        payload["coords3d"] = [[float(v) for v in row] for row in p3.coords]
        with open(out / f"pred_{i:06d}.json", "w") as f:
            json.dump(payload, f)
    write_stamp(out, sys.argv[1:])
    print(f"wrote {len(pred2d)} predictions to {out}")
    return 0


def _cmd_plot(args) -> int:
    from . import evaluation, plots, synthetic
    from .networks import load_checkpoint

    out = _resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = synthetic.load_dataset(args.data)
    params, _ = load_checkpoint(args.checkpoint)
    scenes = data["eval_scenes"][: args.n]
    images = np.stack([s.image for s in scenes])
    pred2d, pred3d = evaluation.predict_poses(params, images)
    for i, scene in enumerate(scenes):
        plots.overlay_2d(scene.image, pred2d[i], params.topology,
                         out / f"overlay_{i:03d}.png", gt2d=scene.gt_pose2d)
        plots.novel_views_3d(pred3d[i], params.topology,
                             out / f"views3d_{i:03d}.png")
    write_stamp(out, sys.argv[1:])
    print(f"wrote {len(scenes)} overlay/novel-view figure pairs to {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="quadpose",
                     description="Self-supervised quadruped pose estimation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-prior", help="build an unpaired 2D pose prior")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate_prior)

    p = sub.add_parser("make-dataset", help="write synthetic train/eval images")
    p.add_argument("--n-train", type=int, default=6000)
    p.add_argument("--n-eval", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--gamma", type=float, default=500.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_make_dataset)

    p = sub.add_parser("ingest", help="video -> filtered resized frames")
    p.add_argument("--videos", nargs="+", required=True)
    p.add_argument("--detector", default="accept-all",
                   help="'accept-all' or 'module:callable'")
    p.add_argument("--min-confidence", type=float, default=0.9)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train", help="run the self-supervised training loop")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--prior", required=True, help="prior pose file")
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None, help="train-state checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="PCK / 3D error report on eval scenes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="predict poses for image files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("plot", help="overlay and novel-view figures")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as e:  # --help exits 0
        return int(e.code or 0)
    try:
        return args.func(args)
    except QuadposeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
