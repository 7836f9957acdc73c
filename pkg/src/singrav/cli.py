"""Command-line drivers tying the pipeline together.

Every run (except `serve`) drops a resolved_config.json next to its outputs so
an experiment can be replayed from the snapshot plus the recorded seed. Exit
codes: 0 ok, 1 runtime failure, 2 usage error; failures print one structured
JSON object to stderr.
"""

import argparse
import json
import os
import sys
from dataclasses import fields as dc_fields
from pathlib import Path

EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    """Bad flag values or config keys; maps to exit code 2."""


def _fail(code: str, exc: Exception) -> None:
    print(json.dumps({"error": {"code": code, "message": str(exc)}}), file=sys.stderr)


def _floats(raw: str, n: int, what: str) -> tuple:
    parts = [p for p in raw.split(",") if p != ""]
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise UsageError(f"{what} must be {n} comma-separated numbers: {exc}") from exc
    if len(vals) != n:
        raise UsageError(f"{what} needs {n} numbers, got {len(vals)}")
    return vals


def _box(raw: str, what: str):
    from singrav.apps import EditMask

    v = _floats(raw, 6, what)
    try:
        return EditMask(v[:3], v[3:])
    except ValueError as exc:
        raise UsageError(f"{what}: {exc}") from exc


def cache_root(flag) -> Path | None:
    if flag is not None:
        return Path(flag)
    env = os.environ.get("SINGRAV_CACHE")
    return Path(env) if env else None


# ---------------------------------------------------------------------------
# config files and overrides


def _read_config_data(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {p} not found")
    if p.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib

        return tomllib.loads(p.read_text())
    return json.loads(p.read_text())


def _parse_override(item: str) -> tuple:
    if "=" not in item:
        raise UsageError(f"override {item!r} must look like section.key=value")
    key, raw = item.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    return key.strip(), val


def resolve_train_config(config_path, overrides):
    """Config file (JSON or TOML) plus dotted-key overrides; overrides win."""
    from singrav.pyramid import PyramidConfig
    from singrav.trainer import TrainConfig

    data = _read_config_data(config_path) if config_path else {}
    known = {
        "pyramid": {f.name for f in dc_fields(PyramidConfig)},
        "train": {f.name for f in dc_fields(TrainConfig)},
    }
    for section in data:
        if section not in known:
            raise UsageError(f"unknown config section {section!r}")
        for key in data[section]:
            if key not in known[section]:
                raise UsageError(f"unknown config key {section}.{key}")
    for item in overrides or []:
        key, val = _parse_override(item)
        parts = key.split(".")
        if len(parts) != 2 or parts[0] not in known or parts[1] not in known[parts[0]]:
            raise UsageError(f"unknown config key {key!r}")
        data.setdefault(parts[0], {})[parts[1]] = val
    try:
        return PyramidConfig.from_json(data.get("pyramid", {})), TrainConfig.from_json(
            data.get("train", {})
        )
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc


def write_snapshot(out_dir, command: str, resolved: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.json"
    path.write_text(json.dumps({"command": command, **resolved}, indent=2, sort_keys=True))
    return path


def _load_dataset_arg(args):
    from singrav.dataio import load_dataset, make_synthetic_scene

    if getattr(args, "data", None):
        return load_dataset(args.data)
    if getattr(args, "synthetic", None):
        seed = args.seed if getattr(args, "seed", None) is not None else 0
        _, dataset = make_synthetic_scene(
            args.synthetic,
            resolution=(args.resolution, args.resolution),
            views=args.views,
            seed=seed,
            volume_res=args.volume_res,
        )
        return dataset
    raise UsageError("provide --data MANIFEST or --synthetic KIND")


# ---------------------------------------------------------------------------
# subcommands


def cmd_prepare(args) -> int:
    from singrav.dataio import build_pyramid, load_dataset, make_synthetic_scene
    from singrav.pyramid import scale_schedule

    pyr_cfg, _ = resolve_train_config(args.config, args.set)
    out = Path(args.out)
    if args.synthetic:
        _, dataset = make_synthetic_scene(
            args.synthetic,
            resolution=(args.resolution, args.resolution),
            views=args.views,
            seed=args.seed,
            volume_res=args.volume_res,
            out_dir=out / "dataset",
        )
        data_ref = str(out / "dataset" / "dataset.json")
    elif args.data:
        dataset = load_dataset(args.data)
        data_ref = str(args.data)
    else:
        raise UsageError("provide --data MANIFEST or --synthetic KIND")

    cache = cache_root(args.cache) or out / "cache"
    pyramid = build_pyramid(dataset, scale_schedule(pyr_cfg), cache_dir=cache)
    write_snapshot(
        out,
        "prepare",
        {
            "data": data_ref,
            "views": dataset.m,
            "pyramid": pyr_cfg.to_json(),
            "cache": str(cache),
            "content_key": pyramid.key,
            "seed": args.seed,
        },
    )
    print(f"prepared {dataset.m} views, {len(pyramid.levels)} pyramid levels -> {cache}")
    return 0


def cmd_train(args) -> int:
    from singrav.pyramid import GeneratorStack
    from singrav.trainer import train_all

    pyr_cfg, train_cfg = resolve_train_config(args.config, args.set)
    if args.seed is not None:
        train_cfg.seed = args.seed
    dataset = _load_dataset_arg(args)
    out = Path(args.out)
    write_snapshot(
        out,
        "train",
        {
            "pyramid": pyr_cfg.to_json(),
            "train": train_cfg.to_json(),
            "data": args.data or f"synthetic:{args.synthetic}",
            "seed": train_cfg.seed,
        },
    )
    stack = GeneratorStack(pyr_cfg)
    train_all(
        dataset,
        stack,
        train_cfg,
        out / "checkpoint",
        cache_dir=cache_root(args.cache),
        resume=not args.no_resume,
    )
    print(f"trained {pyr_cfg.n_scales} scales -> {out / 'checkpoint'}")
    return 0


def cmd_generate(args) -> int:
    from singrav.imageops import save_color_png
    from singrav.pyramid import NoiseStack, derive_seed, load_stack
    from singrav.renderer import default_orbit_camera, render_final
    from singrav.volume import write_sgrv

    stack = load_stack(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    camera = default_orbit_camera(stack.bounds)
    for k in range(args.count):
        noise = NoiseStack.sample(stack.schedule, derive_seed(args.seed, "generate", k))
        volume, _ = stack.sample_scene(noise=noise)
        write_sgrv(out / f"scene_{k:03d}.sgrv", volume)
        save_color_png(out / f"scene_{k:03d}.png", render_final(stack, volume, camera, args.msamples))
    write_snapshot(
        out,
        "generate",
        {"checkpoint": str(args.checkpoint), "seed": args.seed, "count": args.count, "msamples": args.msamples},
    )
    print(f"generated {args.count} scenes -> {out}")
    return 0


def cmd_render(args) -> int:
    from singrav.imageops import depth_scale_for, save_color_png, save_depth_png
    from singrav.renderer import RaySampleSpec, frame_box_camera, look_at_pose, pose_from_list, render
    from singrav.volume import read_sgrv

    volume = read_sgrv(args.volume)
    if args.pose:
        pose = pose_from_list(_floats(args.pose, 16, "--pose"))
    elif args.eye:
        target = _floats(args.target, 3, "--target") if args.target else (0.0, 0.0, 0.0)
        pose = look_at_pose(_floats(args.eye, 3, "--eye"), target=target)
    else:
        raise UsageError("provide --pose or --eye")
    camera = frame_box_camera(volume.bounds, pose, args.w, args.h, args.fov)
    out = render(volume, camera, RaySampleSpec(args.msamples))
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_color_png(out_path, out.color)
    if args.depth:
        save_depth_png(args.depth, out.depth, depth_scale_for(out.depth), sidecar=True)
    write_snapshot(
        out_path.parent,
        "render",
        {
            "volume": str(args.volume),
            "pose": [float(v) for v in pose.reshape(-1)],
            "w": args.w,
            "h": args.h,
            "fov": args.fov,
            "msamples": args.msamples,
        },
    )
    print(f"rendered {args.w}x{args.h} -> {out_path}")
    return 0


def cmd_animate(args) -> int:
    from singrav.apps import AnimationConfig, animate
    from singrav.pyramid import NoiseStack, load_stack
    from singrav.renderer import default_orbit_camera

    stack = load_stack(args.checkpoint)
    base = NoiseStack.sample(stack.schedule, args.seed)
    cfg = AnimationConfig(alpha=args.alpha, xi=args.xi, steps=args.steps, start_scale=args.start_scale)
    camera = default_orbit_camera(stack.bounds)
    walk_seed = args.walk_seed if args.walk_seed is not None else args.seed
    frames = animate(stack, base, cfg, camera, seed=walk_seed, m_samples=args.msamples, out_dir=args.out)
    write_snapshot(
        args.out,
        "animate",
        {
            "checkpoint": str(args.checkpoint),
            "seed": args.seed,
            "walk_seed": walk_seed,
            "alpha": cfg.alpha,
            "xi": cfg.xi,
            "steps": cfg.steps,
            "start_scale": cfg.start_scale,
            "msamples": args.msamples,
        },
    )
    print(f"animated {len(frames)} frames -> {args.out}")
    return 0


def cmd_edit(args) -> int:
    from singrav.apps import (
        default_empty_sample,
        edit_duplicate,
        edit_move,
        edit_remove,
        empty_sample_at,
    )
    from singrav.volume import read_sgrv, write_sgrv

    volume = read_sgrv(args.volume)
    src = _box(args.src, "--src") if args.src else None
    dst = _box(args.dst, "--dst") if args.dst else None

    if args.op in ("remove", "move"):
        if args.empty_point:
            empty = empty_sample_at(volume, _floats(args.empty_point, 3, "--empty-point"))
        else:
            empty = default_empty_sample(volume)
        if src is None:
            raise UsageError(f"{args.op} needs --src")
        src.empty_sample = (tuple(float(v) for v in empty[:3]), float(empty[3]))

    if args.op == "remove":
        edited = edit_remove(volume, src)
    elif args.op == "duplicate":
        if src is None or dst is None:
            raise UsageError("duplicate needs --src and --dst")
        edited = edit_duplicate(volume, src, dst)
    elif args.op == "move":
        if dst is None:
            raise UsageError("move needs --dst")
        edited = edit_move(volume, src, dst)
    else:  # compose
        if not args.source:
            raise UsageError("compose needs --source VOLUME")
        if src is None or dst is None:
            raise UsageError("compose needs --src (in the source) and --dst (in the target)")
        edited = edit_duplicate(volume, src, dst, source_volume=read_sgrv(args.source))

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_sgrv(out_path, edited)
    write_snapshot(
        out_path.parent,
        "edit",
        {
            "volume": str(args.volume),
            "op": args.op,
            "src": args.src,
            "dst": args.dst,
            "empty_point": args.empty_point,
            "source": args.source,
        },
    )
    print(f"applied {args.op} -> {out_path}")
    return 0


def cmd_export_mesh(args) -> int:
    from singrav.apps import export_mesh, save_mesh_obj, save_mesh_stl
    from singrav.volume import read_sgrv

    out_path = Path(args.out)
    if out_path.suffix.lower() not in (".stl", ".obj"):
        raise UsageError(f"output must end in .stl or .obj, got {out_path.suffix!r}")
    mesh = export_mesh(read_sgrv(args.volume), density_threshold=args.threshold)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if out_path.suffix.lower() == ".stl":
        save_mesh_stl(out_path, mesh)
    else:
        save_mesh_obj(out_path, mesh)
    write_snapshot(
        out_path.parent,
        "export-mesh",
        {"volume": str(args.volume), "threshold": args.threshold, "faces": mesh.n_faces},
    )
    print(f"exported {mesh.n_faces} faces -> {out_path}")
    return 0


def cmd_evaluate(args) -> int:
    from singrav.metrics import MetricsConfig, evaluate
    from singrav.pyramid import load_stack

    stack = load_stack(args.checkpoint)
    dataset = _load_dataset_arg(args)
    cfg = MetricsConfig(
        views_m=args.views,
        scenes_j=args.samples,
        seed=args.seed,
        m_samples=args.msamples,
        feature_weights=args.features,
    )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    report = evaluate(stack, dataset, cfg, out_path=out_path)
    write_snapshot(
        out_path.parent,
        "evaluate",
        {
            "checkpoint": str(args.checkpoint),
            "data": args.data or f"synthetic:{args.synthetic}",
            "metrics": cfg.to_json(),
        },
    )
    print(f"sifid_mv={report['sifid_mv']:.6f} diversity_mv={report['diversity_mv']:.6f} -> {out_path}")
    return 0


def cmd_serve(args) -> int:
    from singrav import service

    service.serve(
        checkpoint=args.checkpoint,
        scenes_dir=args.scenes,
        host=args.host,
        port=args.port,
        m_samples=args.msamples,
    )
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset manifest JSON path")
    p.add_argument("--synthetic", choices=("spheres", "boxes", "terrain-noise"), help="procedural scene kind")
    p.add_argument("--views", type=int, default=8, help="synthetic camera count")
    p.add_argument("--resolution", type=int, default=64, help="synthetic image side")
    p.add_argument("--volume-res", type=int, default=48, help="synthetic ground-truth grid side")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="singrav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build dataset pyramids and synthetic fixtures")
    _add_dataset_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON/TOML config with a pyramid section")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")
    p.add_argument("--cache", help="pyramid cache root (default: SINGRAV_CACHE)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train the full scale cascade")
    _add_dataset_flags(p)
    p.add_argument("--config", help="JSON/TOML config with pyramid/train sections")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")
    p.add_argument("--out", required=True, help="run directory (checkpoint/ + metrics.csv)")
    p.add_argument("--cache", help="pyramid cache root (default: SINGRAV_CACHE)")
    p.add_argument("--seed", type=int, default=None, help="overrides train.seed")
    p.add_argument("--no-resume", action="store_true", help="ignore existing checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample scenes to SGRV1 plus preview renders")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--msamples", type=int, default=64, help="ray samples per preview pixel")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("render", help="render a saved SGRV1 volume")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True, help="color PNG path")
    p.add_argument("--pose", help="16 comma-separated row-major camera-to-world floats")
    p.add_argument("--eye", help="x,y,z camera position (look-at alternative to --pose)")
    p.add_argument("--target", help="x,y,z look-at target (default origin)")
    p.add_argument("--w", type=int, default=256)
    p.add_argument("--h", type=int, default=256)
    p.add_argument("--fov", type=float, default=40.0)
    p.add_argument("--msamples", type=int, default=64)
    p.add_argument("--depth", help="also write a 16-bit depth PNG here")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("animate", help="render a noise-walk animation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="base scene seed")
    p.add_argument("--walk-seed", type=int, default=None, help="walk seed (default: --seed)")
    p.add_argument("--alpha", type=float, default=0.58)
    p.add_argument("--xi", type=float, default=0.45)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--start-scale", type=int, default=3)
    p.add_argument("--msamples", type=int, default=64)
    p.set_defaults(func=cmd_animate)

    p = sub.add_parser("edit", help="apply a box edit to a saved volume")
    p.add_argument("--volume", required=True, help="input SGRV1 file")
    p.add_argument("--out", required=True, help="output SGRV1 file")
    p.add_argument("--op", required=True, choices=("remove", "duplicate", "move", "compose"))
    p.add_argument("--src", help="x0,y0,z0,x1,y1,z1 source box")
    p.add_argument("--dst", help="x0,y0,z0,x1,y1,z1 destination box")
    p.add_argument("--empty-point", help="x,y,z world point whose voxel defines empty space")
    p.add_argument("--source", help="source SGRV1 file for compose")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("export-mesh", help="marching-cubes mesh from a saved volume")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True, help=".stl or .obj path")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_export_mesh)

    p = sub.add_parser("evaluate", help="multi-view quality/diversity report")
    p.add_argument("--data", help="dataset manifest JSON path")
    p.add_argument("--synthetic", choices=("spheres", "boxes", "terrain-noise"), help="procedural scene kind")
    p.add_argument("--views", type=int, default=40, help="reference views to score (and synthetic camera count)")
    p.add_argument("--resolution", type=int, default=64, help="synthetic image side")
    p.add_argument("--volume-res", type=int, default=48, help="synthetic ground-truth grid side")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="metrics_report.json")
    p.add_argument("--samples", type=int, default=50, help="generated scenes per view")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--msamples", type=int, default=128)
    p.add_argument("--features", default="auto", help="inception weights: auto|random|path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--scenes", default="scenes", help="scene record directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None, help="default: SINGRAV_PORT or 8000")
    p.add_argument("--msamples", type=int, default=128)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args) or 0
    except UsageError as exc:
        _fail("usage", exc)
        return EXIT_USAGE
    except KeyboardInterrupt:
        raise
    except Exception as exc:
        _fail(type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
