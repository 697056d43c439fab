"""Command-line entry points: train, eval, render, serve."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .decomposition import DecomposedField, DecompositionManifest, plan_partition, train_decomposed
from .model import ApmgModel, ModelConfig, init_model, load_model, save_model
from .render import Camera, RenderConfig, ModelField, TransferFunction, VolumeField, load_camera, load_tf, render_frame, render_progressive, save_png
from .trainer import TrainConfig, psnr, train_single
from .volume import load_header, load_volume

DEFAULT_CAMERA = Camera(eye=(0.0, 0.0, 3.0), look_at=(0.0, 0.0, 0.0))
DEFAULT_PORT = 8080


class CliError(Exception):
    pass


def _parse_triple(text: str, sep: str, name: str) -> tuple[int, int, int]:
    parts = text.split(sep)
    if len(parts) != 3:
        raise CliError(f"{name} must be three integers separated by {sep!r}, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise CliError(f"{name}: {exc}") from exc


def _load_input_volume(args):
    header = load_header(args.header)
    return header, load_volume(args.data, header)


def cmd_train(args) -> int:
    header = load_header(args.header)
    data_path = Path(args.data)
    if not data_path.exists():
        raise CliError(f"volume file not found: {data_path}")
    if data_path.stat().st_size != header.byte_length:
        raise CliError(
            f"volume payload is {data_path.stat().st_size} bytes, header requires {header.byte_length}")

    resolution = _parse_triple(args.grid_res, ",", "--grid-res")
    decomp = _parse_triple(args.decomp, "x", "--decomp")
    model_cfg = ModelConfig(grids=args.grids, channels=args.features,
                            resolution=resolution, flat_top_p=args.flat_top_p, seed=args.seed)
    train_cfg = TrainConfig(iterations=args.iters, batch_size=args.batch_size,
                            lr_main=args.lr, lr_transform=args.lr_transform,
                            delay_start=args.delay_start, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()

    if decomp == (1, 1, 1):
        volume = load_volume(data_path, header)
        model = init_model(model_cfg, seed=args.seed, vmin=volume.vmin, vmax=volume.vmax)
        model, log = train_single(model, volume, train_cfg)
        save_model(model, out / "model.apmg")
        log.write_jsonl(out / "train_log.jsonl")
        plan = plan_partition(header.dims, 1, 1, 1, args.ghost)
        brick = plan.bricks[0]
        manifest = DecompositionManifest(plan=plan, volume_header=header, bricks=[{
            "core_lo": list(brick.core.lo), "core_hi": list(brick.core.hi),
            "ghost_lo": list(brick.ghost.lo), "ghost_hi": list(brick.ghost.hi),
            "model_path": "model.apmg",
            "vmin": volume.vmin, "vmax": volume.vmax,
            "psnr": psnr(model, volume), "seed": args.seed,
            "iterations_run": log.iterations_run,
            "train_seconds": log.wall_seconds,
        }])
        manifest.write(out / "manifest.json")
        final_psnr = manifest.bricks[0]["psnr"]
    else:
        plan = plan_partition(header.dims, *decomp, args.ghost)
        train_decomposed(data_path, header, plan, model_cfg, train_cfg, out, workers=args.workers)
        field = DecomposedField.load(out / "manifest.json")
        volume = load_volume(data_path, header)
        final_psnr = psnr(field, volume)

    wall = time.perf_counter() - t0
    print(f"PSNR: {final_psnr:.4f} dB")
    print(f"wall time: {wall:.2f} s")
    return 0


def _load_field(model_path: str):
    path = Path(model_path)
    if path.is_dir():
        if (path / "manifest.json").exists():
            path = path / "manifest.json"
        elif (path / "model.apmg").exists():
            path = path / "model.apmg"
        else:
            raise CliError(f"no manifest.json or model.apmg in {path}")
    if not path.exists():
        raise CliError(f"model artifact not found: {path}")
    if path.name.endswith("manifest.json"):
        return DecomposedField.load(path)
    return ModelField(load_model(path))


def cmd_eval(args) -> int:
    header, volume = _load_input_volume(args)
    field = _load_field(args.model)
    if isinstance(field, DecomposedField):
        manifest_dims = field.manifest.volume_header.dims
        if tuple(manifest_dims) != tuple(header.dims):
            raise CliError(
                f"manifest dims {manifest_dims} do not match volume dims {header.dims}")
    print(f"PSNR: {psnr(field, volume):.6f} dB")
    return 0


def cmd_render(args) -> int:
    if args.model:
        field = _load_field(args.model)
    elif args.data and args.header:
        _, volume = _load_input_volume(args)
        field = VolumeField(volume)
    else:
        raise CliError("provide --model or both --data and --header")
    camera = load_camera(args.camera) if args.camera else DEFAULT_CAMERA
    tf = load_tf(args.tf) if args.tf else TransferFunction()
    cfg = RenderConfig(samples_per_ray=args.samples, batch_size=args.batch_size)

    if args.progressive:
        image = None
        for item in render_progressive(field, camera, tf, cfg):
            image = item.preview
    else:
        image = render_frame(field, camera, tf, cfg)
    save_png(image, args.out)
    if args.float_out:
        np.save(args.float_out, image)
    print(f"wrote {args.out} ({camera.width}x{camera.height})")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    artifacts = Path(args.artifacts)
    if not artifacts.is_dir():
        raise CliError(f"artifact directory not found: {artifacts}")
    viewer = Path(args.viewer_dir) if args.viewer_dir else None
    app = create_app(artifacts, viewer_dir=viewer)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apmg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model (or brick grid of models) to a volume")
    p.add_argument("--data", required=True, help="raw volume file")
    p.add_argument("--header", required=True, help="JSON sidecar header")
    p.add_argument("--grids", type=int, default=16, help="number of feature grids M")
    p.add_argument("--grid-res", default="32,32,32", help="grid resolution D,H,W")
    p.add_argument("--features", type=int, default=2, help="channels per grid vertex")
    p.add_argument("--flat-top-p", type=int, default=10)
    p.add_argument("--iters", type=int, default=50_000)
    p.add_argument("--batch-size", type=int, default=100_000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--lr-transform", type=float, default=0.001)
    p.add_argument("--delay-start", type=int, default=500,
                   help="iterations before transform updates begin")
    p.add_argument("--decomp", default="1x1x1", help="brick grid IxJxK")
    p.add_argument("--ghost", type=int, default=1, help="ghost voxels per brick side")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="data-space PSNR of a trained artifact")
    p.add_argument("--model", required=True, help=".apmg file, manifest.json, or directory")
    p.add_argument("--data", required=True)
    p.add_argument("--header", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render a PNG from a model, manifest, or raw volume")
    p.add_argument("--model", help=".apmg file, manifest.json, or directory")
    p.add_argument("--data", help="raw volume file (with --header)")
    p.add_argument("--header")
    p.add_argument("--camera", help="camera JSON file")
    p.add_argument("--tf", help="transfer function JSON file")
    p.add_argument("--samples", type=int, default=128, help="samples per ray")
    p.add_argument("--batch-size", type=int, default=65536)
    p.add_argument("--progressive", action="store_true",
                   help="assemble through the progressive hierarchy (same final image)")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--float-out", help="also dump the float32 image as .npy")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("serve", help="run the HTTP/WebSocket render service")
    p.add_argument("--artifacts", required=True, help="directory of loadable artifacts")
    p.add_argument("--port", type=int, default=int(os.environ.get("APMG_PORT", DEFAULT_PORT)))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--viewer-dir", help="static viewer bundle to serve at /")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single exit point for all failures
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
