"""Command-line surface: init, train, zoom, render, warp, eval, check-sr.

A run directory holds a plain-text config plus one subdirectory per zoom
level: ``run/<level>/{cameras.json, scene.ply, sr/*.png, renders/*.png,
report.jsonl}``. Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

logger = logging.getLogger("zoomsplat.cli")

ENDPOINT_ENV = "ZOOMSPLAT_SR_ENDPOINT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="zoomsplat",
                description="Progressive zoom-in Gaussian splatting")
    sub = p.add_subparsers(dest="command")

    sp = sub.add_parser("init", help="build a scene from cameras and images")
    sp.add_argument("--cameras", required=True)
    sp.add_argument("--images", required=True)
    sp.add_argument("--run", required=True)
    sp.add_argument("--points", default=None,
                    help="sparse points PLY (xyz, optional rgb)")
    sp.add_argument("--uniform-count", type=int, default=10000)
    sp.add_argument("--sh-degree", type=int, default=1)
    sp.add_argument("--zoom-factor", type=int, default=4)
    sp.add_argument("--base-iters", type=int, default=500)
    sp.add_argument("--step-iters", type=int, default=300)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("train", help="run base reconstruction")
    sp.add_argument("--run", required=True)
    sp.add_argument("--iters", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("zoom", help="run progressive zoom steps")
    sp.add_argument("--run", required=True)
    sp.add_argument("--steps", type=int, default=1)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--sr-provider", choices=["builtin", "remote"], default=None)
    sp.add_argument("--endpoint", default=None)

    sp = sub.add_parser("render", help="render views or a focal sweep")
    sp.add_argument("--run", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--traj", action="store_true")
    sp.add_argument("--frames", type=int, default=60)
    sp.add_argument("--focal-min", type=float, default=1.0)
    sp.add_argument("--focal-max", type=float, default=16.0)
    sp.add_argument("--camera-index", type=int, default=0)
    sp.add_argument("--no-lod", action="store_true")
    sp.add_argument("--plot", action="store_true",
                    help="write an adjacent-frame difference figure")

    sp = sub.add_parser("warp", help="warp an image between two views")
    sp.add_argument("--source", required=True)
    sp.add_argument("--source-depth", required=True)
    sp.add_argument("--dest-depth", required=True)
    sp.add_argument("--cameras", required=True)
    sp.add_argument("--src-index", type=int, required=True)
    sp.add_argument("--dst-index", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mask-out", default=None)
    sp.add_argument("--tol", type=float, default=0.05)

    sp = sub.add_parser("eval", help="PSNR/SSIM over two image directories")
    sp.add_argument("dir_a")
    sp.add_argument("dir_b")
    sp.add_argument("--out", default=None,
                    help="directory for metrics.csv and metrics.png")

    sp = sub.add_parser("check-sr", help="builtin vs remote parity probe")
    sp.add_argument("--endpoint", default=None)
    sp.add_argument("--scale", type=int, default=4)
    return p


# ---------------------------------------------------------------------------
# run-directory plumbing


def _state_paths(run: Path):
    return run / "state.json", run / "config.cfg"


def _load_run(run: Path):
    from .pipeline import PipelineConfig, Roi, ZoomState
    from .optimizer import LossWeights
    from .renderer import RenderOptions
    from .storage import read_cameras, read_config, read_scene

    state_path, cfg_path = _state_paths(run)
    raw = read_config(cfg_path)
    meta = json.loads(state_path.read_text())
    weights = LossWeights(
        lambda_hr=float(raw.get("lambda_hr", 0.6)),
        lambda_lr=float(raw.get("lambda_lr", 0.4)),
        lambda_geo=float(raw.get("lambda_geo", 0.05)),
        lambda_dssim=float(raw.get("lambda_dssim", 0.2)))
    config = PipelineConfig(
        zoom_factor_s=int(raw.get("zoom_factor_s", 4)),
        num_zoom_steps=int(raw.get("num_zoom_steps", 1)),
        weights=weights,
        base_iterations=int(raw.get("base_iterations", 500)),
        step_iterations=int(raw.get("step_iterations", 300)),
        neighbor_count=int(raw.get("neighbor_count", 2)),
        sr_provider=raw.get("sr_provider", "builtin"),
        sr_endpoint=raw.get("sr_endpoint") or None,
        rng_seed=int(raw.get("rng_seed", 0)),
        fallback_seed_count=int(raw.get("fallback_seed_count", 10000)),
        render_options=RenderOptions(
            tile_size=int(raw.get("tile_size", 16))))
    level = int(meta["current_level"])
    scene = read_scene(run / str(level) / "scene.ply")
    base_cameras = read_cameras(run / "cameras.json")
    state = ZoomState(
        scene=scene, base_cameras=base_cameras,
        roi=Roi(center=np.asarray(meta["roi_center"]),
                radius=float(meta["roi_radius"])),
        current_level=level)
    return state, config, raw


def _save_state_meta(run: Path, state):
    state_path, _ = _state_paths(run)
    from .storage import atomic_write_text
    atomic_write_text(state_path, json.dumps({
        "current_level": state.current_level,
        "roi_center": state.roi.center.tolist(),
        "roi_radius": state.roi.radius,
    }, indent=2) + "\n")


def _level_dir(run: Path, level: int) -> Path:
    d = run / str(level)
    (d / "sr").mkdir(parents=True, exist_ok=True)
    (d / "renders").mkdir(parents=True, exist_ok=True)
    return d


def _load_supervision(run: Path, raw_cfg: dict, cameras):
    from .storage import read_image
    images_dir = Path(raw_cfg["image_dir"])
    views = []
    for cam in cameras:
        path = images_dir / f"{cam.id}.png"
        if not path.exists():
            raise FileNotFoundError(f"missing supervision image {path}")
        views.append((read_image(path), None, cam))
    return views


# ---------------------------------------------------------------------------
# commands


def cmd_init(args) -> int:
    from .pipeline import compute_roi, init_scene_from_points, init_scene_uniform
    from .storage import (read_cameras, read_points_ply, write_cameras,
                          write_config, write_scene)

    run = Path(args.run)
    run.mkdir(parents=True, exist_ok=True)
    cameras = read_cameras(args.cameras)
    roi = compute_roi(cameras)
    if args.points:
        pts, colors = read_points_ply(args.points)
        scene = init_scene_from_points(pts, colors, cameras,
                                       sh_degree=args.sh_degree,
                                       zoom_factor_s=args.zoom_factor)
    else:
        scene = init_scene_uniform(roi, cameras, count=args.uniform_count,
                                   sh_degree=args.sh_degree,
                                   zoom_factor_s=args.zoom_factor,
                                   rng_seed=args.seed)

    write_cameras(run / "cameras.json", cameras)
    write_config(run / "config.cfg", {
        "image_dir": str(Path(args.images).resolve()),
        "zoom_factor_s": str(args.zoom_factor),
        "sh_degree": str(args.sh_degree),
        "base_iterations": str(args.base_iters),
        "step_iterations": str(args.step_iters),
        "rng_seed": str(args.seed),
        "sr_provider": "builtin",
    })
    level = _level_dir(run, 0)
    write_scene(level / "scene.ply", scene)
    write_cameras(level / "cameras.json", cameras)

    from .pipeline import ZoomState
    state = ZoomState(scene=scene, base_cameras=cameras, roi=roi)
    _save_state_meta(run, state)
    print(f"initialized run at {run} with {len(scene)} primitives, "
          f"{len(cameras)} cameras")
    return 0


def cmd_train(args) -> int:
    from .optimizer import Schedule, optimize_layer
    from .renderer import render
    from .reporting import save_report_jsonl, save_training_curves
    from .storage import write_image, write_scene, write_depth

    run = Path(args.run)
    state, config, raw = _load_run(run)
    if args.seed is not None:
        config.rng_seed = args.seed
    iters = args.iters if args.iters is not None else config.base_iterations
    views = _load_supervision(run, raw, state.base_cameras)
    report = optimize_layer(state.scene, views, config.weights,
                            Schedule(iterations=iters,
                                     rng_seed=config.rng_seed,
                                     render_options=config.render_options))
    level = _level_dir(run, state.current_level)
    write_scene(level / "scene.ply", state.scene)
    save_report_jsonl(report, level / "report.jsonl")
    save_training_curves(report.records, level / "loss_curve.png")
    for cam in state.base_cameras:
        out = render(state.scene, cam, config.render_options)
        write_image(level / "renders" / f"{cam.id}.png", out.color)
        write_depth(level / "renders" / f"{cam.id}_depth.npy", out.depth)
    _save_state_meta(run, state)
    print(f"trained level {state.current_level} for {iters} iterations; "
          f"held-in PSNR {report.final_psnr:.2f} dB")
    return 0


def cmd_zoom(args) -> int:
    from .pipeline import zoom_step
    from .reporting import save_report_jsonl, save_training_curves
    from .sr_bridge import make_provider
    from .storage import write_cameras, write_image, write_scene, write_depth, atomic_write_text

    run = Path(args.run)
    state, config, raw = _load_run(run)
    if args.seed is not None:
        config.rng_seed = args.seed
    if args.sr_provider:
        config.sr_provider = args.sr_provider
    endpoint = args.endpoint or os.environ.get(ENDPOINT_ENV) or config.sr_endpoint
    provider = make_provider(config.sr_provider, endpoint)

    for _ in range(args.steps):
        art = zoom_step(state, config, provider)
        level = _level_dir(run, art.level)
        write_scene(level / "scene.ply", state.scene)
        write_cameras(level / "cameras.json", art.cameras)
        for i, img in enumerate(art.renders):
            cam_id = art.cameras[i].id
            write_image(level / "renders" / f"{cam_id}.png", img)
            write_depth(level / "renders" / f"{cam_id}_depth.npy",
                        art.depths[i])
        for i, img in enumerate(art.sr_images):
            write_image(level / "sr" / f"{art.cameras[i].id}.png", img)
        atomic_write_text(level / "sr" / "prompts.json",
                          json.dumps(art.prompts, indent=2) + "\n")
        save_report_jsonl(art.report, level / "report.jsonl")
        save_training_curves(art.report.records, level / "loss_curve.png")
        _save_state_meta(run, state)
        print(f"zoom level {art.level}: {len(state.scene)} primitives, "
              f"held-in PSNR {art.report.final_psnr:.2f} dB, "
              f"pruned {art.pruned}")
    return 0


def cmd_render(args) -> int:
    from .pipeline import make_zoom_cameras, render_trajectory
    from .renderer import RenderOptions, render
    from .reporting import save_sweep_diffs
    from .storage import write_image

    run = Path(args.run)
    state, config, raw = _load_run(run)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    options = RenderOptions(tile_size=config.render_options.tile_size,
                            lod_enabled=not args.no_lod)
    if args.traj:
        aimed = make_zoom_cameras(state.base_cameras, state.roi, 0,
                                  config.zoom_factor_s)
        idx = args.camera_index
        if not (0 <= idx < len(aimed)):
            raise _UsageError(f"--camera-index {idx} out of range")
        frames = render_trajectory(state, (args.focal_min, args.focal_max),
                                   args.frames, [aimed[idx]], options)
        for i, frame in enumerate(frames):
            write_image(out_dir / f"frame_{i:04d}.png", frame)
        if args.plot and len(frames) > 1:
            diffs = [float(np.abs(a.data - b.data).mean())
                     for a, b in zip(frames[:-1], frames[1:])]
            save_sweep_diffs(diffs, out_dir / "sweep_diffs.png")
        print(f"wrote {len(frames)} frames to {out_dir}")
    else:
        for cam in state.base_cameras:
            out = render(state.scene, cam, options)
            write_image(out_dir / f"{cam.id}.png", out.color)
        print(f"rendered {len(state.base_cameras)} views to {out_dir}")
    return 0


def cmd_warp(args) -> int:
    from .storage import read_cameras, read_depth, read_image, write_image
    from .warp import warp_image

    cams = read_cameras(args.cameras)
    for idx in (args.src_index, args.dst_index):
        if not (0 <= idx < len(cams)):
            raise _UsageError(f"camera index {idx} out of range")
    res = warp_image(read_image(args.source), read_depth(args.source_depth),
                     read_depth(args.dest_depth), cams[args.src_index],
                     cams[args.dst_index], occlusion_tol=args.tol)
    write_image(args.out, res.warped)
    if args.mask_out:
        write_image(args.mask_out, res.valid_mask)
    valid = float(res.valid_mask.data.mean())
    print(f"warped {args.source} -> {args.out} (valid fraction {valid:.3f})")
    return 0


def cmd_eval(args) -> int:
    from .metrics import psnr, ssim
    from .reporting import eval_summary, format_eval_table, save_eval_outputs
    from .storage import read_image

    dir_a, dir_b = Path(args.dir_a), Path(args.dir_b)
    names = sorted(p.name for p in dir_a.glob("*.png"))
    if not names:
        raise _UsageError(f"no PNG images in {dir_a}")
    rows = []
    for name in names:
        other = dir_b / name
        if not other.exists():
            logger.warning("skipping %s: missing in %s", name, dir_b)
            continue
        a = read_image(dir_a / name)
        b = read_image(other)
        rows.append({"name": name, "psnr": psnr(a, b), "ssim": ssim(a, b)})
    if not rows:
        raise _UsageError("no image pairs with matching names")
    print(format_eval_table(rows))
    print(json.dumps({"summary": eval_summary(rows)}))
    if args.out:
        csv_path, png_path = save_eval_outputs(rows, args.out)
        print(f"wrote {csv_path} and {png_path}")
    return 0


def cmd_check_sr(args) -> int:
    from . import pngcodec
    from .geometry import ImageBuffer
    from .sr_bridge import RemoteProvider, SrRequest, builtin_reference_sr, super_resolve

    endpoint = args.endpoint or os.environ.get(ENDPOINT_ENV) \
        or "http://127.0.0.1:8377"
    idx = np.arange(256, dtype=np.float64).reshape(16, 16)
    ramp = ImageBuffer((idx / 255.0)[:, :, None])
    builtin = pngcodec.png_round_trip(builtin_reference_sr(ramp, args.scale))
    remote = super_resolve(SrRequest(lr_image=ramp, scale=args.scale),
                           RemoteProvider(endpoint))
    diff = float(np.abs(builtin.data - remote.hr_image.data).max())
    ok = diff <= 1e-3
    print(f"builtin vs {endpoint}: max abs diff {diff:.2e} "
          f"-> {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


COMMANDS = {
    "init": cmd_init,
    "train": cmd_train,
    "zoom": cmd_zoom,
    "render": cmd_render,
    "warp": cmd_warp,
    "eval": cmd_eval,
    "check-sr": cmd_check_sr,
}


def cli_main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_usage()
            return 1
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        logger.error("%s", exc)
        return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
