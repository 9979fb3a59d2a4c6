"""Command-line entry points: gen-data, train, render, eval, serve."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .dataset import (
    default_tf,
    demo_volume,
    generate_dataset,
    icosphere_cameras,
    inference_path,
    load_dataset,
    pose_from_azel,
    reference_render,
    save_image,
    volume_from_manifest,
)
from .decoder import fresh_decoders
from .encoding import EncodingConfig
from .field import fresh_field
from .metrics import psnr, ssim
from .render import Camera, RenderConfig, render_image
from .service import ModelService, serve_forever
from .train import _resolution_for_budget, desk_schedule, train


def _cmd_gen_data(args) -> int:
    volume = demo_volume(args.scene, param_dims=args.param_dims)
    if args.param_dims and volume.param_dims != args.param_dims:
        print(f"note: scene '{args.scene}' uses {volume.param_dims} parameter(s)")
    poses = icosphere_cameras(args.level, args.radius)
    if volume.param_dims == 0:
        samples = np.zeros((1, 0))
    else:
        grids = [np.linspace(0.0, 1.0, args.param_samples)] * volume.param_dims
        mesh = np.meshgrid(*grids, indexing="ij")
        samples = np.stack([m.ravel() for m in mesh], axis=-1)
    t0 = time.time()
    ds = generate_dataset(volume, default_tf(), poses, samples, args.out,
                          width=args.size, height=args.size, steps=args.steps,
                          background=_parse_background(args.background))
    print(f"wrote {len(ds.frames)} frames to {args.out} in {time.time() - t0:.1f}s")
    return 0


def _parse_background(text: str):
    vals = [float(v) for v in text.split(",")]
    if len(vals) == 1:
        vals = vals * 3
    if len(vals) != 3:
        raise SystemExit("--background must be 'v' or 'r,g,b'")
    return tuple(vals)


def _cmd_train(args) -> int:
    ds = load_dataset(args.data)
    rng = np.random.default_rng(args.seed)
    start_res = _resolution_for_budget(ds.aabb_hint, max(16**3, args.grid // 16))
    if args.param_grid:
        param_sizes = [args.param_grid] * ds.param_dims
    else:
        # one axis node per distinct training value of that parameter
        distinct = ds.distinct_params()
        param_sizes = [max(2, len(np.unique(distinct[:, k]))) for k in range(ds.param_dims)]
    field = fresh_field(start_res, ds.aabb_hint, args.rank_density,
                        args.rank_appearance,
                        ds.param_ranges, param_sizes,
                        args.rank_param, rng)
    decoders = fresh_decoders(field, EncodingConfig(args.pe, args.sh), args.hidden, rng)
    schedule = desk_schedule(iterations=args.iters, voxel_budget=args.grid,
                             batch_rays=args.batch)
    if args.samples:
        schedule.target_samples = args.samples
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = out.with_suffix(".log")
    t0 = time.time()
    with open(log_path, "w") as fh:
        result = train(ds, field, decoders, schedule, seed=args.seed,
                       log=lambda line: fh.write(line + "\n"),
                       progress_every=max(1, args.iters // 20))
    meta = {
        "dataset": str(args.data),
        "dataset_fingerprint": _dataset_fingerprint(args.data),
        "param_names": ds.param_names,
        "width": ds.width,
        "height": ds.height,
        "focal": ds.focal,
        "background": [float(c) for c in ds.background],
        "iterations": schedule.iterations,
        "seed": args.seed,
        "schedule": {
            "batch_rays": schedule.batch_rays,
            "lr_grid": schedule.lr_grid,
            "lr_mlp": schedule.lr_mlp,
            "lambda1": list(schedule.lambda1),
            "lambda2": schedule.lambda2,
            "grid_growth": [[it, b] for it, b in schedule.grid_growth],
            "mask_iter": schedule.mask_iter,
            "voxelskip_iter": schedule.voxelskip_iter,
            "warmup": list(schedule.warmup),
            "target_samples": schedule.target_samples,
            "importance_extra": schedule.importance_extra,
        },
        "final_psnr_batch": result.reports[-1].psnr_batch if result.reports else None,
    }
    ckpt.save(result.field, result.decoders, meta, out)
    print(f"trained {schedule.iterations} iters in {(time.time() - t0) / 60:.1f} min; "
          f"checkpoint -> {out}, metrics log -> {log_path}")
    return 0


def _dataset_fingerprint(data_dir) -> str:
    import hashlib
    manifest = Path(data_dir) / "manifest.json"
    return hashlib.sha256(manifest.read_bytes()).hexdigest()[:16]


def _params_list(args_params: str, k: int) -> np.ndarray:
    if not args_params:
        return np.zeros((1, 0)) if k == 0 else None
    rows = [[float(v) for v in row.split(",") if v] for row in args_params.split(";")]
    return np.asarray(rows, dtype=np.float64)


def _cmd_render(args) -> int:
    field, decoders, meta = ckpt.load(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    k = field.param_dims
    params = _params_list(args.params, k)
    if params is None:
        lo, hi = zip(*field.param_ranges) if k else ((), ())
        params = (np.asarray(lo) + np.asarray(hi))[None, :] / 2.0 if k else np.zeros((1, 0))
    poses = inference_path(args.views, radius=args.radius) if args.azimuth is None \
        else [pose_from_azel(args.azimuth, args.elevation, args.radius)]
    config = RenderConfig(n_samples=args.samples,
                          background=tuple(meta.get("background", (1, 1, 1))),
                          jitter=False)
    focal = meta.get("focal", args.size * 1.0723) * args.size / meta.get("width", args.size)
    # parameters sweep across the path when one row is given per view; else the
    # single row applies everywhere
    n = len(poses)
    if params.shape[0] not in (1, n):
        raise SystemExit(f"--params must give 1 or {n} rows")
    t0 = time.time()
    for i, pose in enumerate(poses):
        p = params[min(i, params.shape[0] - 1)]
        cam = Camera(pose, focal, args.size, args.size)
        img = render_image(field, decoders, cam, p, config)
        save_image(img, out / f"{i:04d}.png")
    print(f"rendered {n} view(s) to {out} in {time.time() - t0:.1f}s")
    return 0


def _cmd_eval(args) -> int:
    field, decoders, meta = ckpt.load(args.checkpoint)
    ds = load_dataset(args.data)
    volume, tf, gen = volume_from_manifest(args.data)
    poses = inference_path(args.views, radius=args.radius)
    k = field.param_dims
    if k:
        lo = np.array([r[0] for r in field.param_ranges])
        hi = np.array([r[1] for r in field.param_ranges])
        fracs = np.linspace(0.0, 1.0, args.views)
        params = lo[None, :] + fracs[:, None] * (hi - lo)[None, :]
    else:
        params = np.zeros((args.views, 0))
    config = RenderConfig(n_samples=args.samples,
                          background=tuple(float(c) for c in ds.background), jitter=False)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    img_dir = out.parent / (out.stem + "_images")
    img_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, pose in enumerate(poses):
        cam = Camera(pose, ds.focal, ds.width, ds.height)
        pred = render_image(field, decoders, cam, params[i], config)
        gt = reference_render(volume, tf, cam, params[i], steps=gen["steps"],
                              background=ds.background,
                              density_scale=gen["density_scale"])
        save_image(pred, img_dir / f"{i:04d}.png")
        rows.append((i, psnr(pred, gt), ssim(pred, gt)))
        print(f"view {i}: psnr={rows[-1][1]:.2f} ssim={rows[-1][2]:.4f}", flush=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["view", "psnr", "ssim"])
        for row in rows:
            writer.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.6f}"])
        writer.writerow(["mean", f"{np.mean([r[1] for r in rows]):.6f}",
                         f"{np.mean([r[2] for r in rows]):.6f}"])
    print(f"wrote {out}")
    return 0


def _cmd_serve(args) -> int:
    field, decoders, meta = ckpt.load(args.checkpoint)
    service = ModelService(field, decoders, meta, max_size=args.max_size,
                           default_samples=args.samples)
    serve_forever(service, args.host, args.port)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="factorfield",
                                     description="Factorized radiance-field training and rendering")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset to disk")
    p.add_argument("--out", required=True)
    p.add_argument("--scene", default="blob-sum",
                   choices=["blob-sum", "shell", "moving-blob"])
    p.add_argument("--param-dims", type=int, default=0)
    p.add_argument("--param-samples", type=int, default=5)
    p.add_argument("--level", type=int, default=1, help="icosphere subdivision level")
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--steps", type=int, default=256)
    p.add_argument("--background", default="1,1,1")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="fit a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help=".vsnf checkpoint path")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=64**3, help="final voxel budget")
    p.add_argument("--batch", type=int, default=1024)
    p.add_argument("--samples", type=int, default=0, help="override target samples/ray")
    p.add_argument("--rank-density", type=int, default=8)
    p.add_argument("--rank-appearance", type=int, default=16)
    p.add_argument("--rank-param", type=int, default=4)
    p.add_argument("--param-grid", type=int, default=0,
                   help="nodes per parameter axis (0 = one per distinct training value)")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--pe", type=int, default=6)
    p.add_argument("--sh", type=int, default=2)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("render", help="render poses from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--views", type=int, default=181)
    p.add_argument("--azimuth", type=float, default=None)
    p.add_argument("--elevation", type=float, default=0.0)
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--params", default="",
                   help="semicolon-separated rows of comma-separated values")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("eval", help="score checkpoint renders against the oracle")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--views", type=int, default=16)
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--samples", type=int, default=128)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("serve", help="start the HTTP render service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--max-size", type=int, default=1024)
    p.add_argument("--samples", type=int, default=128)
    p.set_defaults(func=_cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
