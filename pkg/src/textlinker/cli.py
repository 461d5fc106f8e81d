"""Command-line entry point wiring the pipeline stages to files.

Exit codes: 0 on success, 1 for usage errors, 2 for data errors (malformed
files, shape mismatches).  Batch subcommands accept --jobs for parallel file
processing; outputs are deterministic regardless of the job count.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import evaluation, formats, render, synth, trainer
from .decoder import build_graph, detect
from .encoder import encode
from .errors import (
    DataFormatError,
    InconsistentLabelError,
    InvalidPredictionError,
    InvalidSizeError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from .topology import DEFAULT_GAMMA, DEFAULT_STRIDES, build_pyramid

__all__ = ["main", "run"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

_DATA_ERRORS = (
    DataFormatError,
    ShapeMismatchError,
    InvalidSizeError,
    InvalidPredictionError,
    InconsistentLabelError,
    TrainingDivergedError,
    OSError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise _UsageError(message)


def _parallel_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _scene_pyramid(scene, args):
    return build_pyramid(scene.canvas_w, scene.canvas_h, tuple(args.strides), args.gamma)


def _add_pyramid_flags(parser):
    parser.add_argument(
        "--strides",
        type=int,
        nargs=6,
        default=list(DEFAULT_STRIDES),
        metavar="S",
        help="per-layer strides, finest first (must double)",
    )
    parser.add_argument(
        "--gamma", type=float, default=DEFAULT_GAMMA, help="default-box scale coefficient"
    )


def _build_parser() -> _Parser:
    parser = _Parser(prog="textlinker", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scene files")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--canvas", type=int, nargs=2, default=[512, 512], metavar=("W", "H"))
    p.add_argument("--words", type=int, nargs=2, default=[1, 8], metavar=("MIN", "MAX"))
    p.add_argument("--heights", type=float, nargs=2, default=[10.0, 44.0], metavar=("LO", "HI"))
    p.add_argument("--aspects", type=float, nargs=2, default=[3.0, 8.0], metavar=("LO", "HI"))
    p.add_argument("--thetas", type=float, nargs=2, default=[-1.2, 1.2], metavar=("LO", "HI"))
    p.add_argument("--min-separation", type=float, default=24.0)
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("encode", help="write groundtruth tensor maps for scenes")
    p.add_argument("scenes", type=Path, nargs="+")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--jobs", type=int, default=1)
    _add_pyramid_flags(p)
    p.set_defaults(handler=_cmd_encode)

    p = sub.add_parser("oracle", help="write (optionally noisy) oracle prediction maps")
    p.add_argument("scenes", type=Path, nargs="+")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--score-flip-rate", type=float, default=0.0)
    p.add_argument("--score-jitter", type=float, default=0.0)
    p.add_argument("--offset-jitter", type=float, default=0.0)
    p.add_argument("--link-flip-rate", type=float, default=0.0)
    p.add_argument("--jobs", type=int, default=1)
    _add_pyramid_flags(p)
    p.set_defaults(handler=_cmd_oracle)

    p = sub.add_parser("decode", help="decode tensor maps into detections")
    p.add_argument("maps", type=Path, nargs="+")
    p.add_argument("--alpha", type=float, required=True, help="segment score threshold")
    p.add_argument("--beta", type=float, required=True, help="link score threshold")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--print", dest="print_boxes", action="store_true")
    p.add_argument("--degrees", action="store_true", help="print angles in degrees")
    p.set_defaults(handler=_cmd_decode)

    p = sub.add_parser("eval", help="score detections against groundtruth scenes")
    p.add_argument("--dets", type=Path, nargs="+", required=True)
    p.add_argument("--gt", type=Path, nargs="+", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", type=Path)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("grid-search", help="sweep decode thresholds for best f-measure")
    p.add_argument("--maps", type=Path, nargs="+", required=True)
    p.add_argument("--gt", type=Path, nargs="+", required=True)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--iou", type=float, default=0.5)
    p.set_defaults(handler=_cmd_grid_search)

    p = sub.add_parser("train-toy", help="train the linear toy predictor")
    p.add_argument("scenes", type=Path, nargs="+")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument(
        "--lr-schedule",
        default="0:0.5,1200:0.1",
        help="comma-separated start:rate pairs",
    )
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--lambda1", type=float, default=1.0, help="offset loss weight")
    p.add_argument("--lambda2", type=float, default=1.0, help="link loss weight")
    p.add_argument("--neg-ratio", type=int, default=3, help="mined negatives per positive")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input-size", type=int, nargs=2, default=[256, 256], metavar=("W", "H"))
    p.set_defaults(handler=_cmd_train_toy)

    p = sub.add_parser("render", help="render a scene (and optional maps) to SVG")
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--maps", type=Path)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=_cmd_render)

    p = sub.add_parser("bench", help="time decode+combine on an oracle map")
    p.add_argument("--width", type=int, default=1280)
    p.add_argument("--height", type=int, default=768)
    p.add_argument("--words", type=int, default=10)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_bench)

    return parser


def _cmd_synth(args) -> int:
    config = synth.SceneConfig(
        canvas=tuple(args.canvas),
        word_count=tuple(args.words),
        height_range=tuple(args.heights),
        aspect_range=tuple(args.aspects),
        theta_range=tuple(args.thetas),
        min_separation=args.min_separation,
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        scene = synth.generate_scene(config, seed=args.seed + i)
        formats.write_scene(args.out_dir / f"scene_{i:04d}.txt", scene)
    print(f"wrote {args.count} scenes to {args.out_dir}")
    return EXIT_OK


def _cmd_encode(args) -> int:
    args.out_dir.mkdir(parents=True, exist_ok=True)

    def job(path: Path):
        scene = formats.read_scene(path)
        pyramid = _scene_pyramid(scene, args)
        gt = encode(list(scene.words), pyramid)
        out = args.out_dir / (path.stem + ".slpm")
        formats.write_prediction_maps(out, formats.groundtruth_to_prediction_maps(gt))
        return out

    outs = _parallel_map(job, list(args.scenes), args.jobs)
    print(f"encoded {len(outs)} scenes to {args.out_dir}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    noise = synth.NoiseSpec(
        score_flip_rate=args.score_flip_rate,
        score_jitter=args.score_jitter,
        offset_jitter=args.offset_jitter,
        link_flip_rate=args.link_flip_rate,
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(i, path) for i, path in enumerate(args.scenes)]

    def job(item):
        i, path = item
        scene = formats.read_scene(path)
        pyramid = _scene_pyramid(scene, args)
        maps = synth.oracle_predictions(scene, pyramid, noise, seed=args.seed + i)
        out = args.out_dir / (path.stem + ".slpm")
        formats.write_prediction_maps(out, maps)
        return out

    outs = _parallel_map(job, jobs, args.jobs)
    print(f"wrote {len(outs)} oracle maps to {args.out_dir}")
    return EXIT_OK


def _cmd_decode(args) -> int:
    args.out_dir.mkdir(parents=True, exist_ok=True)

    def job(path: Path):
        maps = formats.read_prediction_maps(path)
        dets = detect(maps, maps.pyramid, args.alpha, args.beta)
        out = args.out_dir / (path.stem + "_det.txt")
        formats.write_scene(
            out,
            formats.detections_to_scene(dets, (maps.pyramid.input_w, maps.pyramid.input_h)),
        )
        return path, dets

    results = _parallel_map(job, list(args.maps), args.jobs)
    total = 0
    for path, dets in results:
        total += len(dets)
        if args.print_boxes:
            for i, d in enumerate(dets):
                angle = math.degrees(d.theta) if args.degrees else d.theta
                unit = "deg" if args.degrees else "rad"
                print(
                    f"{path.name} det {i}: center ({d.x:.2f}, {d.y:.2f}) "
                    f"size ({d.w:.2f}, {d.h:.2f}) angle {angle:.4f} {unit}"
                )
    print(f"decoded {len(results)} map files, {total} detections")
    return EXIT_OK


def _read_pairs(det_paths, gt_paths):
    if len(det_paths) != len(gt_paths):
        raise _UsageError("--dets and --gt must list the same number of files")
    dets = [formats.read_scene(p).rects() for p in det_paths]
    gts = [formats.read_scene(p).rects() for p in gt_paths]
    return dets, gts


def _cmd_eval(args) -> int:
    dets, gts = _read_pairs(args.dets, args.gt)
    per_image = []
    for path, d, g in zip(args.dets, dets, gts):
        report = evaluation.match_and_score(d, g, args.iou)
        per_image.append((path.name, report))
        print(formats.format_report(f"image {path.name}", report))
    aggregate = evaluation.evaluate_batch(dets, gts, args.iou)
    print(formats.format_report("aggregate", aggregate))
    if args.out:
        formats.write_report(args.out, per_image, aggregate)
    return EXIT_OK


def _cmd_grid_search(args) -> int:
    if len(args.maps) != len(args.gt):
        raise _UsageError("--maps and --gt must list the same number of files")
    maps = [formats.read_prediction_maps(p) for p in args.maps]
    gts = [formats.read_scene(p).rects() for p in args.gt]
    pyramid = maps[0].pyramid
    alpha, beta, report = evaluation.grid_search_thresholds(
        maps, gts, pyramid, step=args.step, iou_thresh=args.iou
    )
    print(f"best alpha {alpha:.2f} beta {beta:.2f}")
    print(formats.format_report("aggregate", report))
    return EXIT_OK


def _parse_schedule(text: str):
    schedule = []
    try:
        for part in text.split(","):
            start, rate = part.split(":")
            schedule.append((int(start), float(rate)))
    except ValueError as exc:
        raise _UsageError(f"bad --lr-schedule {text!r}: {exc}") from exc
    return tuple(schedule)


def _cmd_train_toy(args) -> int:
    scenes = [formats.read_scene(p) for p in args.scenes]
    cfg = trainer.TrainConfig(
        lr_schedule=_parse_schedule(args.lr_schedule),
        momentum=args.momentum,
        batch_size=args.batch_size,
        iterations=args.iterations,
        seed=args.seed,
        input_size=tuple(args.input_size),
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        neg_ratio=args.neg_ratio,
    )
    result = trainer.train_toy(scenes, cfg)
    formats.save_predictor(args.out, result.predictor)
    print(
        f"trained {args.iterations} iterations: loss {result.losses[0]:.4f} -> "
        f"{result.losses[-1]:.4f}; saved to {args.out}"
    )
    return EXIT_OK


def _cmd_render(args) -> int:
    scene = formats.read_scene(args.scene)
    graph = None
    detections = None
    if args.maps:
        maps = formats.read_prediction_maps(args.maps)
        graph = build_graph(maps, maps.pyramid, args.alpha, args.beta)
        detections = detect(maps, maps.pyramid, args.alpha, args.beta)
    args.out.write_text(render.render_svg(scene, graph, detections), encoding="ascii")
    print(f"rendered {args.out}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    config = synth.SceneConfig(
        canvas=(args.width, args.height),
        word_count=(args.words, args.words),
    )
    scene = synth.generate_scene(config, seed=args.seed)
    pyramid = build_pyramid(args.width, args.height)
    maps = synth.oracle_predictions(scene, pyramid)
    detect(maps, pyramid, args.alpha, args.beta)  # warmup
    times = []
    for _ in range(args.runs):
        start = time.perf_counter()
        detect(maps, pyramid, args.alpha, args.beta)
        times.append(time.perf_counter() - start)
    best = min(times)
    mean = sum(times) / len(times)
    cells = pyramid.total_cells
    print(
        f"decode+combine {args.width}x{args.height} ({cells} locations, "
        f"{len(scene.words)} words): best {best * 1e3:.2f} ms, mean {mean * 1e3:.2f} ms, "
        f"{cells / best:,.0f} locations/s"
    )
    return EXIT_OK


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse --help
        code = exc.code if isinstance(exc.code, int) else EXIT_OK
        return code
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
