"""
Command-line entry point: render, bench, finetune, gradcheck, popcheck, taa.

Exit codes: 0 success, 1 a requested check failed, 2 invalid input or a
scene, camera, image or render error.
"""

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.checks.bench import run_bench, spp_ratio, stochastic_vs_sorted
from src.checks.gradcheck import GradcheckOptions, run_gradcheck
from src.checks.popcheck import PopcheckOptions, run_popcheck
from src.checks.render_run import render_views
from src.checks.scenes import coplanar_scene, default_camera, dense_scene, planar_scene
from src.checks.taa_run import path_or_static, run_taa_check
from src.config import (
    DEFAULT_CONFIG_PATH,
    SELECTED_LOG_LEVEL,
    BenchConfig,
    DepthMode,
    ImageFormat,
    LogLevel,
    LossKind,
    OptimConfig,
    RenderConfig,
    RendererKind,
    TaaConfig,
    get_section,
    load_yaml_config,
)
from src.io.cameras import load_cameras
from src.io.images import signed_to_rgb, write_image
from src.io.ply import SplatIOError, load_ply, save_ply
from src.optim.finetune import FinetuneHistory, finetune, load_dataset
from src.raster.forward import RenderError
from src.report.writer import write_jsonl, write_summary

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_ERROR = 2


def _float_list(text: str) -> List[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scene", type=Path, help="Splat PLY file")
    common.add_argument("--cameras", type=Path, help="Camera set JSON file (camera path for taa)")
    common.add_argument("--spp", type=int, help="Samples per pixel")
    common.add_argument("--depth-mode", choices=[m.value for m in DepthMode])
    common.add_argument("--seed", type=int, help="Base pass seed")
    common.add_argument("--background", help="Background colour: one value or r,g,b in [0,1]")
    common.add_argument("--tile-size", type=int)
    common.add_argument("--out", type=Path, default=Path("out"), help="Output directory")
    common.add_argument("--renderer", choices=[r.value for r in RendererKind], default=RendererKind.STOCHASTIC.value)
    common.add_argument("--threads", type=int, help="Worker pool size")
    common.add_argument("--config", type=Path, help="YAML configuration file")
    common.add_argument("--log-level", choices=[level.value for level in LogLevel])
    common.add_argument("--format", choices=[f.value for f in ImageFormat], default=ImageFormat.PNG8.value)
    common.add_argument("--reference", help="Directory of reference images, or 'sorted'")

    parser = argparse.ArgumentParser(prog="stochastic-splats", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("render", parents=[common], help="Render one image per camera")

    bench = sub.add_parser("bench", parents=[common], help="Frame-time grid")
    bench.add_argument("--spp-list", type=_int_list)
    bench.add_argument("--scales", type=_float_list, help="Resolution scale factors")
    bench.add_argument("--tile-sizes", type=_int_list)
    bench.add_argument("--runs", type=int)
    bench.add_argument("--warmup", type=int)

    tune = sub.add_parser("finetune", parents=[common], help="Fine-tune a scene on posed images")
    tune.add_argument("--iterations", type=int)
    tune.add_argument("--spp-train", type=int)
    tune.add_argument("--lr-position", type=float)
    tune.add_argument("--loss", choices=[k.value for k in LossKind])
    tune.add_argument("--checkpoint-every", type=int, help="Write a checkpoint PLY every N iterations")

    grad = sub.add_parser("gradcheck", parents=[common], help="Verify gradients")
    grad.add_argument("--runs", type=int, help="Independent path-replay runs to average")

    pop = sub.add_parser("popcheck", parents=[common], help="Measure popping under small rotations")
    pop.add_argument("--max-angle", type=float)
    pop.add_argument("--step", type=float)

    taa = sub.add_parser("taa", parents=[common], help="Temporal accumulation along a camera path")
    taa.add_argument("--tau", type=float)
    taa.add_argument("--frames", type=int, help="Frames of the static path when --cameras is absent")
    taa.add_argument("--reference-spp", type=int)
    return parser


def _render_config(args: argparse.Namespace, config: Dict[str, Any]) -> RenderConfig:
    return get_section(config, "render", RenderConfig, overrides={
        "spp": args.spp,
        "depth_mode": args.depth_mode,
        "pass_seed": args.seed,
        "background": args.background,
        "tile_size": args.tile_size,
        "threads": args.threads,
    })


def _require(value: Optional[Path], flag: str, command: str) -> Path:
    if value is None:
        raise ValueError(f"{command} needs {flag}")
    return value


def cmd_render(args, config, cfg: RenderConfig) -> bool:
    scene = load_ply(_require(args.scene, "--scene", "render"))
    cameras = load_cameras(_require(args.cameras, "--cameras", "render"))
    renderer = RendererKind(args.renderer)
    records = render_views(scene, cameras, cfg, renderer, args.out, ImageFormat(args.format), args.reference)
    write_jsonl(records, args.out / "report.jsonl")
    write_summary("render", {
        "scene": str(args.scene), "n_gaussians": len(scene), "renderer": renderer.value,
        "depth_mode": cfg.depth_mode.value, "spp": cfg.spp, "seed": cfg.pass_seed,
        "frames": records,
    }, args.out)
    return True


def cmd_bench(args, config, cfg: RenderConfig) -> bool:
    bench_cfg = get_section(config, "bench", BenchConfig, overrides={
        "spp_list": args.spp_list, "scales": args.scales, "tile_sizes": args.tile_sizes,
        "runs": args.runs, "warmup": args.warmup,
    })
    if args.scene is not None:
        scene = load_ply(args.scene)
        cam = load_cameras(_require(args.cameras, "--cameras", "bench with --scene"))[0]
    else:
        scene, cam = dense_scene(), default_camera(64, 64)
    table = run_bench(scene, cam, cfg, bench_cfg, show_progress=True)
    args.out.mkdir(parents=True, exist_ok=True)
    table.to_csv(args.out / "bench.csv", index=False)

    rows = [
        {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}
        for row in table.to_dict("records")
    ]
    for row in rows:
        row["spp"] = None if row["spp"] is None else int(row["spp"])
    write_jsonl(rows, args.out / "report.jsonl")
    write_summary("bench", {
        "rows": rows, "spp_ratio": spp_ratio(table), "stochastic_vs_sorted": stochastic_vs_sorted(table),
    }, args.out)
    return True


def cmd_finetune(args, config, cfg: RenderConfig) -> bool:
    optim_cfg = get_section(config, "optim", OptimConfig, overrides={
        "iterations": args.iterations, "spp_train": args.spp_train, "lr_position": args.lr_position,
        "loss": args.loss, "checkpoint_every": args.checkpoint_every,
    })
    scene = load_ply(_require(args.scene, "--scene", "finetune"))
    dataset = load_dataset(_require(args.cameras, "--cameras", "finetune"))
    history = FinetuneHistory()

    def checkpoint(current, iteration: int) -> None:
        save_ply(current, args.out / f"checkpoint_{iteration:05d}.ply")

    result = finetune(scene, dataset, optim_cfg, cfg, checkpoint=checkpoint, history=history, show_progress=True)
    output = args.out / "scene.ply"
    save_ply(result, output)
    write_jsonl(
        ({"iteration": i + 1, "loss": loss, "skipped_rows": skipped}
         for i, (loss, skipped) in enumerate(zip(history.losses, history.skipped_rows))),
        args.out / "report.jsonl",
    )
    write_summary("finetune", {
        "views": len(dataset), "iterations": optim_cfg.iterations, "spp_train": optim_cfg.spp_train,
        "loss": optim_cfg.loss.value, "output": str(output),
        "first_loss": history.losses[0] if history.losses else None,
        "last_loss": history.losses[-1] if history.losses else None,
    }, args.out)
    return True


def cmd_gradcheck(args, config, cfg: RenderConfig) -> bool:
    options = get_section(config, "gradcheck", GradcheckOptions, overrides={
        "stochastic_spp": args.spp, "pass_seed": args.seed, "stochastic_runs": args.runs, "threads": args.threads,
    })
    report, images = run_gradcheck(options)
    for name, image in images.items():
        write_image(signed_to_rgb(image), args.out / f"{name}.png", ImageFormat.PNG8)
        write_image(image, args.out / f"{name}.pfm", ImageFormat.PFM)
    write_jsonl((e.model_dump() for e in report.entries), args.out / "report.jsonl")
    write_summary("gradcheck", {
        "passed": report.passed, "entries": [e.model_dump() for e in report.entries], "image_ncc": report.image_ncc,
    }, args.out)
    return report.passed


def cmd_popcheck(args, config, cfg: RenderConfig) -> bool:
    options = get_section(config, "popcheck", PopcheckOptions, overrides={
        "max_angle": args.max_angle, "step": args.step, "spp": args.spp, "threads": args.threads,
    })
    scene = cam = None
    if args.scene is not None:
        scene = load_ply(args.scene)
        cam = load_cameras(_require(args.cameras, "--cameras", "popcheck with --scene"))[0]
    report, heatmaps = run_popcheck(options, scene, cam, cfg)
    for name, heatmap in heatmaps.items():
        write_image(heatmap, args.out / f"{name}.{args.format}", ImageFormat(args.format))
    write_jsonl((m.model_dump() for m in report.modes), args.out / "report.jsonl")
    write_summary("popcheck", {
        "passed": report.passed, "modes": [m.model_dump() for m in report.modes],
        "ratio": report.ratio, "max_ratio": report.max_ratio,
    }, args.out)
    return report.passed


def cmd_taa(args, config, cfg: RenderConfig) -> bool:
    taa_cfg = get_section(config, "taa", TaaConfig, overrides={
        "tau": args.tau, "spp": args.spp, "reference_spp": args.reference_spp, "static_frames": args.frames,
    })
    path = load_cameras(args.cameras) if args.cameras is not None else None
    if args.scene is not None:
        scene = load_ply(args.scene)
    else:
        scene = planar_scene() if path else coplanar_scene()
    cameras = path_or_static(path, default_camera(32, 32), taa_cfg.static_frames)

    report, sequence = run_taa_check(scene, cameras, cfg, taa_cfg)
    image_format = ImageFormat(args.format)
    for i, (raw, accumulated) in enumerate(zip(sequence.raw_frames, sequence.taa_frames)):
        write_image(raw, args.out / "raw" / f"frame_{i:04d}.{image_format.value}", image_format)
        write_image(accumulated, args.out / "taa" / f"frame_{i:04d}.{image_format.value}", image_format)
    write_jsonl(
        ({"frame": i, "raw_mse": raw, "taa_mse": acc} for i, (raw, acc) in enumerate(zip(report.raw_mse, report.taa_mse))),
        args.out / "report.jsonl",
    )
    write_summary("taa", {
        "passed": report.passed, "static": report.static, "frames": report.frames, "tau": report.tau,
        "ratio": report.ratio, "mse_pairs": list(zip(report.raw_mse, report.taa_mse)),
    }, args.out)
    return report.passed


COMMANDS = {
    "render": cmd_render,
    "bench": cmd_bench,
    "finetune": cmd_finetune,
    "gradcheck": cmd_gradcheck,
    "popcheck": cmd_popcheck,
    "taa": cmd_taa,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level or SELECTED_LOG_LEVEL,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )
    try:
        if args.config is not None and not args.config.exists():
            raise ValueError(f"Configuration file {args.config} does not exist")
        config = load_yaml_config(args.config or DEFAULT_CONFIG_PATH)
        cfg = _render_config(args, config)
        passed = COMMANDS[args.command](args, config, cfg)
    except (SplatIOError, RenderError, ValueError, OSError) as e:
        # pydantic.ValidationError is a ValueError
        message = (str(e).splitlines() or [""])[0]
        logger.error(f"{args.command}: {type(e).__name__}: {message}")
        return EXIT_ERROR
    if not passed:
        logger.warning(f"{args.command}: check failed")
        return EXIT_CHECK_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
