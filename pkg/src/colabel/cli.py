"""Command-line entry point: segment, superpixels, eval, synth, bench-filter.

Exit status: 0 on success, 1 on usage errors, 2 on data errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, apply_overrides, default_config, load_config
from .core import LabelSet, ShapeError, check_unary
from .formats import (
    FormatError,
    read_frames,
    read_labelmap,
    read_unary,
    write_color_map,
    write_frames,
    write_labelmap,
    write_unary,
)
from .inference import run_inference
from .lattice import LatticeError, build_lattice, filter as lattice_filter, gaussian_filter_exact
from .metrics import evaluate, synthesize_scene
from .potentials import estimate_cooccurrence, load_cooccurrence_matrix
from .superpixels import (
    DEFAULT_MEANSHIFT,
    MeanShiftParams,
    assemble_clique_layers,
    load_region_layer,
    meanshift_segment,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

log = logging.getLogger("colabel")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _segment_layers(video, sources):
    layers = []
    for src in sources:
        if isinstance(src, MeanShiftParams):
            layers.append([meanshift_segment(frame, src) for frame in video.frames])
        else:
            layers.append(load_region_layer(src, video))
    return assemble_clique_layers(layers)


def _cooccurrence_model(cfg: RunConfig, n_labels: int):
    src = cfg.cooccurrence
    if src is None:
        return None
    if src.matrix is not None:
        model = load_cooccurrence_matrix(src.matrix, src.weight)
    else:
        maps = [m for p in src.estimate_from for m in read_labelmap(p)]
        ignore = cfg.labels.ignore_label if cfg.labels is not None else None
        model = estimate_cooccurrence(maps, n_labels, src.weight, ignore)
    if model.n_labels != n_labels:
        raise ShapeError(f"co-occurrence matrix has {model.n_labels} labels, unary field has {n_labels}")
    return model


def _load_run_config(path) -> RunConfig:
    return default_config() if path is None else load_config(path)


def cmd_segment(args) -> int:
    cfg = apply_overrides(
        _load_run_config(args.config),
        frame_level=args.frame_level,
        iterations=args.iterations,
        batch_size=args.batch_size,
    )
    video = read_frames(args.frames)
    unary = check_unary(read_unary(args.unary), video)
    n_labels = unary.shape[-1]
    labels = cfg.labels or LabelSet.default(n_labels)
    if len(labels) != n_labels:
        raise ShapeError(f"config lists {len(labels)} labels, unary field has {n_labels}")

    t0 = time.perf_counter()
    cliques = _segment_layers(video, cfg.layers) if cfg.pn is not None else None
    t_cliques = time.perf_counter() - t0
    result = run_inference(
        video,
        unary,
        cliques=cliques,
        config=cfg.inference,
        specs=cfg.kernels,
        cooc=_cooccurrence_model(cfg, n_labels),
        pn=cfg.pn,
        keep_q=False,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_labelmap(result.labels, out / "labels.lmap")
    if not args.no_color:
        write_color_map(result.labels, labels, out / "color")
    per_frame = result.wall_time / video.n_frames
    print(f"frames={video.n_frames} batch_size={cfg.inference.batch_size} windows={len(result.window_times)}")
    print(f"iterations_run={result.iterations_run} superpixel_time={t_cliques:.3f}")
    print(f"inference_time={result.wall_time:.3f} time_per_frame={per_frame:.4f}")
    return EXIT_OK


def cmd_superpixels(args) -> int:
    cfg = _load_run_config(args.config)
    params = [p for p in cfg.layers if isinstance(p, MeanShiftParams)] or list(DEFAULT_MEANSHIFT)
    video = read_frames(args.frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for m, p in enumerate(params):
        maps = np.stack([meanshift_segment(frame, p).labels for frame in video.frames])
        write_labelmap(maps, out / f"layer_{m}.lmap")
        counts = [int(f.max()) + 1 for f in maps]
        print(f"layer={m} spatial_bandwidth={p.spatial_bandwidth} range_bandwidth={p.range_bandwidth} "
              f"min_region_size={p.min_region_size} mean_regions={np.mean(counts):.1f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = read_labelmap(args.pred)
    gt = read_labelmap(args.gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    labels = _load_run_config(args.config).labels if args.config else None
    ignore = args.ignore_label if args.ignore_label is not None else (labels.ignore_label if labels else None)
    n_labels = args.labels or (len(labels) if labels else int(max(pred.max(), gt.max())) + 1)
    video = None
    if args.video:
        video = read_frames(args.video)
        if video.shape != gt.shape:
            raise ShapeError(f"video {video.shape} does not match label maps {gt.shape}")
    report = evaluate(pred, gt, n_labels, ignore, video, args.color_eps)
    for key, value in report.items():
        print(f"{key}={value:.6f}")
    if args.csv:
        path = Path(args.csv)
        fresh = not path.exists() or path.stat().st_size == 0
        with open(path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if fresh:
                writer.writerow(["pred", "gt"] + list(report))
            writer.writerow([args.pred, args.gt] + [f"{v:.6f}" for v in report.values()])
    return EXIT_OK


def cmd_synth(args) -> int:
    video, gt, unary = synthesize_scene(args.seed, args.t, args.h, args.w, args.l, args.noise)
    out = Path(args.out)
    write_frames(video, out / "frames")
    write_unary(unary, out / "unary.unry")
    write_labelmap(gt, out / "gt.lmap")
    print(f"wrote {video.n_frames} frames of {args.h}x{args.w}, {args.l} labels to {out}")
    return EXIT_OK


def cmd_bench_filter(args) -> int:
    rng = np.random.default_rng(args.seed)
    features = rng.normal(size=(args.n, args.d))
    values = rng.uniform(size=(args.n, args.channels))
    t0 = time.perf_counter()
    lattice = build_lattice(features)
    t1 = time.perf_counter()
    out = lattice_filter(lattice, values)
    t2 = time.perf_counter()
    print(f"N={args.n} d={args.d} channels={args.channels} vertices={lattice.n_vertices}")
    print(f"build_time={t1 - t0:.4f} filter_time={t2 - t1:.4f}")
    if args.exact:
        exact = gaussian_filter_exact(features, values)
        t3 = time.perf_counter()
        nrmse = np.sqrt(((out - exact) ** 2).mean(axis=0)) / np.sqrt((exact**2).mean(axis=0))
        print(f"exact_time={t3 - t2:.4f} max_channel_nrmse={nrmse.max():.4f}")
    return EXIT_OK


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="colabel", description="Dense CRF co-labeling of video frames.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("segment", help="run mean-field inference on a frame directory")
    p.add_argument("--config", help="JSON run config (default: the bundled defaults)")
    p.add_argument("--frames", required=True, help="directory of PPM frames, sorted by name")
    p.add_argument("--unary", required=True, help="UNRY unary cost file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frame-level", action="store_true", help="label each frame on its own (batch size 1)")
    p.add_argument("--iterations", type=_positive_int)
    p.add_argument("--batch-size", type=_positive_int)
    p.add_argument("--no-color", action="store_true", help="skip the palette-rendered PPMs")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("superpixels", help="write mean-shift region maps per layer")
    p.add_argument("--config")
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_superpixels)

    p = sub.add_parser("eval", help="score predicted label maps against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--video", help="frame directory; enables temporal_stability")
    p.add_argument("--config", help="read label names and ignore_label from this config")
    p.add_argument("--labels", type=_positive_int, help="label count (default: inferred)")
    p.add_argument("--ignore-label", type=int)
    p.add_argument("--color-eps", type=float, default=10.0)
    p.add_argument("--csv", help="append a result row to this CSV file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a seeded synthetic scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t", type=_positive_int, default=10)
    p.add_argument("--h", type=_positive_int, default=64)
    p.add_argument("--w", type=_positive_int, default=64)
    p.add_argument("--l", type=_positive_int, default=4)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench-filter", help="time lattice construction and filtering")
    p.add_argument("--n", type=_positive_int, default=100000)
    p.add_argument("--d", type=_positive_int, default=6)
    p.add_argument("--channels", type=_positive_int, default=4)
    p.add_argument("--exact", action="store_true", help="also run the O(N^2) filter and report the error")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench_filter)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("colabel: a subcommand is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError, ShapeError, LatticeError, ValueError, OSError) as exc:
        print(f"colabel {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(cli_main())
