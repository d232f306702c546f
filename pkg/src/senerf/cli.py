"""Command-line surface binding the pipeline into runnable workflows.

Subcommands: gen-scene, train, self-train, render, eval, mask-eval,
grad-check.  Every training flag has a config-file equivalent (JSON with
the same nested field names as :class:`SelfTrainConfig`); flags win over
the config file, and the ``SENERF_SEED`` environment variable overrides
the config's seed (but not an explicit ``--seed``).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import distill, imgio, metrics, reliability
from .fields import KPlanesConfig, MlpConfig, load_checkpoint, save_checkpoint
from .renderer import render_view
from .scenedata import (
    SceneSpec,
    camera_from_pose,
    default_scene,
    make_extreme_split,
    pose_of_camera,
    read_dataset,
    sample_sphere_poses,
    write_dataset,
)
from .selftrain import (
    OptimConfig,
    SelfTrainConfig,
    ViewRangeSchedule,
    evaluate,
    self_train,
    train_teacher,
)
from .validation import run_grad_check


class CliError(ValueError):
    """User-facing CLI failure (bad flags, missing files, invalid config)."""


def load_config(path, variant="kplanes"):
    """Build a SelfTrainConfig from a JSON document."""
    if path is None:
        return SelfTrainConfig()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise CliError(f"invalid config JSON in {path}: {err}") from None
    return config_from_dict(data, variant)


def config_from_dict(data, default_variant="kplanes"):
    data = dict(data)
    variant = data.get("variant", default_variant)
    kwargs = {}
    nested = {
        "field": KPlanesConfig if variant == "kplanes" else MlpConfig,
        "weights": distill.DistillWeights,
        "policy": reliability.ThresholdPolicy,
        "view_range": ViewRangeSchedule,
        "optimizer": OptimConfig,
    }
    valid = {f.name for f in dataclasses.fields(SelfTrainConfig)}
    for key, value in data.items():
        if key not in valid:
            raise CliError(f"unknown config key {key!r}")
        if key in nested and isinstance(value, dict):
            try:
                value = nested[key](**value)
            except TypeError as err:
                raise CliError(f"bad config section {key!r}: {err}") from None
        elif key == "background":
            value = tuple(value)
        kwargs[key] = value
    try:
        return SelfTrainConfig(**kwargs)
    except Exception as err:
        raise CliError(f"invalid config: {err}") from None


def apply_overrides(cfg, args):
    """Flag > SENERF_SEED > config precedence for the shared knobs."""
    env_seed = os.environ.get("SENERF_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise CliError(f"SENERF_SEED must be an integer, got {env_seed!r}") from None
    for flag, attr in (
        ("seed", "seed"),
        ("steps", "steps_per_iteration"),
        ("iters", "iterations"),
        ("bins", "n_bins"),
        ("batch", "batch_rays"),
        ("pseudo_views", "pseudo_views_per_iteration"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    if getattr(args, "policy", None):
        cfg.policy = dataclasses.replace(cfg.policy, kind=args.policy)
    return cfg


def _parse_index_list(text):
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise CliError(f"expected a comma-separated index list, got {text!r}") from None


def _split_dataset(dataset, args, seed):
    if args.views:
        train_idx = _parse_index_list(args.views)
        test_idx = [i for i in range(len(dataset)) if i not in train_idx]
    else:
        poses = [pose_of_camera(c) for c in dataset.cameras]
        train_idx, test_idx = make_extreme_split(
            poses, np.random.default_rng(seed), n_train=args.train_views
        )
    return train_idx, test_idx


def cmd_gen_scene(args):
    scene = SceneSpec.load(args.spec) if args.spec else default_scene()
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    poses = sample_sphere_poses(
        args.views, rng, theta_range=(args.theta_min, args.theta_max), radius=args.radius
    )
    cams = [
        camera_from_pose(p, width=args.size, height=args.size, fov_deg=args.fov)
        for p in poses
    ]
    out = write_dataset(scene, cams, args.out, write_depth=args.depths)
    scene.save(Path(args.out) / "scene.json")
    print(f"wrote {args.views} views to {out}")
    return 0


def cmd_train(args):
    dataset = read_dataset(args.data)
    if len(dataset) == 0:
        raise CliError(f"dataset at {args.data} has no frames")
    cfg = apply_overrides(load_config(args.config), args)
    train_idx, test_idx = _split_dataset(dataset, args, cfg.seed)
    started = time.perf_counter()
    field, curves = train_teacher(dataset.subset(train_idx), cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(field, out / "field.ckpt", extra={"train_views": train_idx})
    report = {
        "train_views": train_idx,
        "loss_curves": curves,
        "runtime_s": time.perf_counter() - started,
    }
    if test_idx:
        views, mean_psnr, mean_ssim = evaluate(
            field, dataset.subset(test_idx), cfg, threads=args.threads
        )
        report.update(views=views, mean_psnr=mean_psnr, mean_ssim=mean_ssim)
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2)
    print(f"checkpoint and report written to {out}")
    return 0


def cmd_self_train(args):
    dataset = read_dataset(args.data)
    if len(dataset) == 0:
        raise CliError(f"dataset at {args.data} has no frames")
    cfg = apply_overrides(load_config(args.config), args)
    scene_path = Path(args.data) / "scene.json"
    scene = SceneSpec.load(scene_path) if scene_path.exists() else None
    train_idx, test_idx = _split_dataset(dataset, args, cfg.seed)
    heldout = dataset.subset(test_idx) if test_idx else None
    results = self_train(
        dataset.subset(train_idx),
        cfg,
        heldout=heldout,
        out_dir=args.out,
        scene=scene,
    )
    last = results[-1][1]
    print(
        f"{len(results)} iterations done; final student PSNR "
        f"{last.mean_psnr:.2f} dB (teacher {last.teacher_mean_psnr:.2f} dB); "
        f"reports under {args.out}"
    )
    return 0


def cmd_render(args):
    field, header = load_checkpoint(args.ckpt)
    if args.pose:
        parts = [float(x) for x in args.pose.split(",")]
        if len(parts) == 2:
            parts.append(4.0)
        if len(parts) != 3:
            raise CliError(f"--pose expects 'phi,theta[,radius]', got {args.pose!r}")
        from .scenedata import PoseSpec

        camera = camera_from_pose(
            PoseSpec(*parts), width=args.size, height=args.size, fov_deg=args.fov
        )
    elif args.data is not None:
        dataset = read_dataset(args.data)
        if not 0 <= args.index < len(dataset):
            raise CliError(f"--index {args.index} out of range for {len(dataset)} frames")
        camera = dataset.cameras[args.index]
    else:
        raise CliError("render needs either --pose or --data with --index")
    view = render_view(
        field, camera, args.bins, jitter=False, threads=args.threads
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    imgio.save_png(out / "color.png", view.color)
    imgio.save_pfm(out / "depth.pfm", view.masked_depth)
    imgio.save_png(out / "opacity.png", view.opacity)
    print(f"rendered {camera.width}x{camera.height} view to {out}")
    return 0


def cmd_eval(args):
    field, _ = load_checkpoint(args.ckpt)
    dataset = read_dataset(args.data)
    indices = _parse_index_list(args.views) if args.views else list(range(len(dataset)))
    if not indices:
        raise CliError("no views selected for evaluation")
    cfg = SelfTrainConfig(n_bins=args.bins)
    started = time.perf_counter()
    views, mean_psnr, mean_ssim = evaluate(
        field, dataset.subset(indices), cfg, threads=args.threads
    )
    report = {
        "views": [dict(v, lpips=None) for v in views],
        "mean_psnr": mean_psnr,
        "mean_ssim": mean_ssim,
        "mean_lpips": None,
        "mean_average": None,
        "mask": None,
        "runtime_s": time.perf_counter() - started,
    }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"report written to {args.out}")
    else:
        print(text)
    return 0


def cmd_mask_eval(args):
    pred = imgio.load_mask_png(args.pred)
    truth = imgio.load_mask_png(args.gt)
    precision, recall, fpr = reliability.mask_metrics(pred, truth)
    print(json.dumps({"precision": precision, "recall": recall, "fpr": fpr}))
    return 0


def cmd_grad_check(args):
    err, secs = run_grad_check(
        double=args.double, seed=args.seed or 0, samples=args.samples, eps=args.eps
    )
    tol = 1e-6 if args.double else 1e-3
    print(
        json.dumps(
            {
                "max_rel_error": err,
                "tolerance": tol,
                "precision": "double" if args.double else "single",
                "seconds": secs,
            }
        )
    )
    return 0 if err < tol else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="senerf",
        description="Self-evolving radiance fields: train, distill, evaluate.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=os.cpu_count() or 1,
        help="worker threads for forward rendering",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="render an analytic scene into a dataset")
    p.add_argument("--spec", help="scene JSON (default: built-in two-spheres-and-a-box)")
    p.add_argument("--views", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--fov", type=float, default=40.0)
    p.add_argument("--radius", type=float, default=4.0)
    p.add_argument("--theta-min", type=float, default=-5.0)
    p.add_argument("--theta-max", type=float, default=65.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--depths", action="store_true", help="also write depth PFMs")
    p.set_defaults(func=cmd_gen_scene)

    def add_train_flags(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--bins", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--views", help="explicit training view indices, e.g. 0,3,7")
        p.add_argument("--train-views", type=int, default=3)

    p = sub.add_parser("train", help="photometric-only training on chosen views")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("self-train", help="iterative teacher-student training")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    add_train_flags(p)
    p.add_argument("--iters", type=int)
    p.add_argument("--pseudo-views", dest="pseudo_views", type=int)
    p.add_argument(
        "--policy", choices=["fixed", "adaptive", "unified", "gt"], default=None
    )
    p.set_defaults(func=cmd_self_train)

    p = sub.add_parser("render", help="render a checkpoint from a pose or dataset view")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pose", help="'phi,theta[,radius]' in degrees")
    p.add_argument("--data")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--fov", type=float, default=40.0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint against dataset views")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--views", help="comma-separated view indices (default: all)")
    p.add_argument("--out", help="write report JSON here instead of stdout")
    p.add_argument("--bins", type=int, default=64)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mask-eval", help="precision/recall/FPR of a mask pair")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_mask_eval)

    p = sub.add_parser("grad-check", help="gradient check of the full objective")
    p.add_argument("--double", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, default=24)
    p.add_argument("--eps", type=float)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, OSError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
