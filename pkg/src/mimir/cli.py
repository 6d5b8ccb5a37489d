"""Command-line interface.

Subcommands: phantom, project, cv, train, calibrate, predict, evaluate.
Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
The MIMIR_SEED environment variable overrides any configured seed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__, engine
from .config import load_config
from .errors import CheckpointError, DataError, ValidationError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mimir",
        description=(
            "Image-based mean-variance regression: phantom cohorts, projection "
            "tiles, masked heteroscedastic training, calibrated intervals, and "
            "agreement reports."
        ),
    )
    parser.add_argument("--version", action="version", version=f"mimir {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic cohort data directory")
    p.add_argument("--config", type=Path, default=None, help="key=value config file")
    p.add_argument("--out-dir", type=Path, required=True, help="existing output directory")
    p.add_argument("--n-subjects", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--missing-rate", type=float, default=None)
    p.add_argument("--noise-sigma", type=float, default=None)

    p = sub.add_parser("project", help="compress volumes to 2D tile files")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--pgm", action="store_true", help="also write per-channel PGM previews")
    p.add_argument("volumes", nargs="+", type=Path)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--data-dir", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--strata", default=None, help="stratification target, or 'none'")
    p.add_argument("--group", default=None, help="restrict to one registry group")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("train", help="train one model (optionally holding out a fold)")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--data-dir", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--fold-id", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--group", default=None)

    p = sub.add_parser("calibrate", help="fit sigma scale factors on labeled data")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data-dir", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="updated checkpoint path")
    p.add_argument("--csv", type=Path, default=None, help="also write factors as CSV")

    p = sub.add_parser("predict", help="predict means and intervals for volumes")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="predictions CSV path")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("volumes", nargs="*", type=Path, help="volume files or directories")

    p = sub.add_parser("evaluate", help="score predictions against labels")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="report CSV path")
    p.add_argument("--figures-dir", type=Path, default=None)
    p.add_argument("--registry", type=Path, default=None)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--level", type=float, default=0.95)
    return parser


def _expand_volumes(paths) -> list[Path]:
    out: list[Path] = []
    for p in paths:
        if p.is_dir():
            out.extend(sorted(p.glob("*.mvol")))
        else:
            out.append(p)
    return out


def _cmd_phantom(args) -> int:
    overrides = {
        "n_subjects": args.n_subjects,
        "seed": args.seed,
        "missing_rate": args.missing_rate,
        "noise_sigma": args.noise_sigma,
    }
    cfg = load_config(args.config, {k: v for k, v in overrides.items() if v is not None})
    manifest = engine.run_phantom(cfg.phantom, args.out_dir)
    print(
        f"wrote {manifest['n_subjects']} subjects "
        f"({manifest['n_unusable']} without any usable label) to {args.out_dir}"
    )
    return 0


def _cmd_project(args) -> int:
    for volume in _expand_volumes(args.volumes):
        written = engine.run_project(volume, args.out_dir, pgm=args.pgm)
        print(f"{volume} -> {', '.join(written)}")
    return 0


def _cmd_cv(args) -> int:
    cfg = load_config(
        args.config,
        {"seed": args.seed, "strata_key": args.strata},
    )
    _, report = engine.run_cv(
        args.data_dir,
        args.out_dir,
        args.k,
        cfg,
        group=args.group,
        figures=not args.no_figures,
    )
    print(f"cross-validation report written to {args.out_dir}/report.csv")
    for row in report.rows:
        icc = "" if row.icc is None else f" icc={row.icc:.4f}"
        print(f"  {row.target}: n={row.n}{icc} [{row.icc_flag}]")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    engine.run_train(
        args.data_dir, args.out, cfg, k=args.k, fold_id=args.fold_id, group=args.group
    )
    print(f"checkpoint written to {args.out}")
    return 0


def _cmd_calibrate(args) -> int:
    calibration = engine.run_calibrate(
        args.checkpoint, args.data_dir, args.out, out_csv=args.csv
    )
    for i, t in enumerate(calibration.targets):
        tag = "" if calibration.calibrated[i] else " (uncalibrated)"
        print(f"  {t}: factor {calibration.factors[i]:.4f}{tag}")
    print(f"calibrated checkpoint written to {args.out}")
    return 0


def _cmd_predict(args) -> int:
    volumes = _expand_volumes(args.volumes)
    n_ok, errors, elapsed = engine.run_predict(
        args.checkpoint, volumes, args.out, level=args.level
    )
    for path, message in errors:
        print(f"error: {path}: {message}", file=sys.stderr)
    rate = n_ok / elapsed if elapsed > 0 else 0.0
    print(f"predicted {n_ok} subjects in {elapsed:.2f}s ({rate:.0f}/s) -> {args.out}")
    if volumes and n_ok == 0:
        return 1
    return 0


def _cmd_evaluate(args) -> int:
    report = engine.run_evaluate(
        args.predictions,
        args.labels,
        args.out,
        figures_dir=args.figures_dir,
        threshold=args.threshold,
        registry_path=args.registry,
        level=args.level,
    )
    print(f"report written to {args.out}")
    for row in report.rows:
        icc = "" if row.icc is None else f" icc={row.icc:.4f}"
        print(f"  {row.target}: n={row.n}{icc} [{row.icc_flag}]")
    return 0


_COMMANDS = {
    "phantom": _cmd_phantom,
    "project": _cmd_project,
    "cv": _cmd_cv,
    "train": _cmd_train,
    "calibrate": _cmd_calibrate,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
