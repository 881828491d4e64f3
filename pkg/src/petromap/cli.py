"""Command-line interface.

Verbs: build (factor stack only), train (full run), synth (synthetic basin
generator), eval (metrics on existing maps), render (grid to image).
Exit codes: 0 success, 2 config error, 3 data error, 4 training failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .anfis import AnfisError, AnfisTrainingError
from .evaluate import (
    DatasetError,
    MetricError,
    binarize,
    confusion,
    kappa,
    pearson_r,
    rmse,
    write_metrics_report,
)
from .geochem import GeochemError
from .geoprocess import InputDataError, InterpolationError
from .mlp import MlpError, MlpTrainingError
from .pipeline import (
    ConfigError,
    build_factor_stack,
    load_config,
    render_figure,
    render_map,
    run,
)
from .raster import (
    AlignmentError,
    GridDimensionError,
    GridFormatError,
    GridHeader,
    read_ascii_grid,
    write_ascii_grid,
)
from .synth import generate_synthetic_basin

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4

_DATA_ERRORS = (
    GridFormatError, GridDimensionError, AlignmentError, InputDataError,
    InterpolationError, GeochemError, DatasetError, MetricError,
    MlpError, AnfisError, OSError,
)


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if getattr(args, "threshold", None) is not None:
        cfg.threshold = args.threshold
    return cfg


def cmd_build(args):
    cfg = _apply_overrides(load_config(args.config), args)
    target = read_ascii_grid(cfg.target)
    stack = build_factor_stack(cfg, header=target.header)
    os.makedirs(cfg.out_dir, exist_ok=True)
    for fc, grid in zip(cfg.factors, stack):
        path = os.path.join(cfg.out_dir, f"{fc.name}.asc")
        write_ascii_grid(grid, path)
        print(f"wrote {path}")
    return 0


def cmd_train(args):
    cfg = _apply_overrides(load_config(args.config), args)
    run(cfg)
    print(f"run complete; outputs in {cfg.out_dir}")
    return 0


def cmd_synth(args):
    header = GridHeader(ncols=args.ncols, nrows=args.nrows, xll=0.0, yll=0.0,
                        cellsize=args.cellsize)
    paths = generate_synthetic_basin(args.seed, header, args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_eval(args):
    pred = read_ascii_grid(args.pred)
    truth = read_ascii_grid(args.truth)
    binary = binarize(pred, args.threshold)
    cm = confusion(binary, truth)
    valid = (pred.values != pred.nodata_value) & (truth.values != truth.nodata_value)
    r = pearson_r(pred.values[valid], truth.values[valid])
    rm = rmse(pred.values[valid], truth.values[valid])
    kp = kappa(cm)
    print(f"r={r!r}")
    print(f"rmse={rm!r}")
    print(f"kappa={kp!r}")
    print(f"tp={cm.tp} fp={cm.fp} fn={cm.fn} tn={cm.tn}")
    if args.out:
        write_metrics_report(args.out, r, rm, kp, cm, seed=0, threshold=args.threshold)
        print(f"wrote {args.out}")
    return 0


def cmd_render(args):
    grid = read_ascii_grid(args.grid)
    base, ext = os.path.splitext(args.out)
    if ext.lower() == ".png":
        render_figure(grid, args.out, os.path.basename(args.grid))
    else:
        render_map(grid, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="petromap",
        description="Prospectivity mapping: factor stacks, MLP/ANFIS models, validation",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("build", help="build the normalized factor stack only")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="full run: stack, training, maps, metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="generate a synthetic basin input set")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default="synthetic")
    p.add_argument("--nrows", type=int, default=200)
    p.add_argument("--ncols", type=int, default=200)
    p.add_argument("--cellsize", type=float, default=100.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="metrics for an existing potential map")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render a grid to PGM (or PNG)")
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MlpTrainingError, AnfisTrainingError) as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
