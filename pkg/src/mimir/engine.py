"""End-to-end orchestration: dataset I/O, prediction, cross-validation.

A data directory is the on-disk cohort layout:

  volumes/<subject_id>.mvol   raw two-channel volumes
  labels.csv                  values + masks per target
  registry.txt                target definitions (name, unit, kind, group)
  manifest.json               generation parameters and counts

Cross-validation trains one model per fold on the remaining folds,
predicts and calibrates on the held-out fold, and pools the per-fold
validation predictions so every subject is predicted exactly once by a
model that never saw its labels.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .dataset import KIND_BINARY, KIND_CONTINUOUS, LabelMatrix, TargetRegistry, TargetSpec, make_folds
from .errors import DataError, ValidationError
from .formats import (
    PredictionTable,
    read_labels_csv,
    read_registry,
    read_volume,
    write_calibration_csv,
    write_folds_csv,
    write_labels_csv,
    write_predictions_csv,
    write_registry,
    write_tile,
    write_tile_pgm,
    write_training_log_csv,
    write_volume,
)
from .model import ParameterSet, forward
from .phantom import PhantomSpec, export_labels, generate_subject
from .phantom import registry as phantom_registry
from .projection import project, resize_tile
from .report import align_predictions, build_report, render_report_figures, write_report_csv
from .training import train
from .uncertainty import CalibrationFactors, confidence_interval, fit_calibration

PREDICT_BATCH = 64


@dataclass
class DataBundle:
    """One loaded data directory."""

    registry: TargetRegistry
    labels: LabelMatrix
    label_names: tuple[str, ...]
    volume_paths: dict[str, Path]


def load_data_dir(data_dir) -> DataBundle:
    data_dir = Path(data_dir)
    labels_path = data_dir / "labels.csv"
    registry_path = data_dir / "registry.txt"
    volume_dir = data_dir / "volumes"
    for p in (labels_path, registry_path, volume_dir):
        if not p.exists():
            raise ValidationError(f"data directory is missing {p.name}")
    labels, names = read_labels_csv(labels_path)
    registry = read_registry(registry_path)
    paths = {}
    for sid in labels.subjects:
        vp = volume_dir / f"{sid}.mvol"
        if not vp.exists():
            raise ValidationError(f"missing volume file for subject {sid}")
        paths[sid] = vp
    return DataBundle(registry, labels, names, paths)


def tile_for_volume(volume, input_dims) -> np.ndarray:
    tile = resize_tile(project(volume), (input_dims[1], input_dims[2]))
    return tile.pixels


def subject_tiles(bundle: DataBundle, input_dims) -> np.ndarray:
    """Project and resize every subject volume, in label order."""
    tiles = np.empty(
        (len(bundle.labels.subjects), *input_dims), dtype=np.float32
    )
    for i, sid in enumerate(bundle.labels.subjects):
        tiles[i] = tile_for_volume(read_volume(bundle.volume_paths[sid]), input_dims)
    return tiles


# ---------------------------------------------------------------------------
# Phantom cohort emission
# ---------------------------------------------------------------------------


def run_phantom(spec: PhantomSpec, out_dir) -> dict:
    """Write a phantom cohort as a data directory; returns the manifest."""
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise ValidationError(f"output directory {out_dir} does not exist")
    volume_dir = out_dir / "volumes"
    volume_dir.mkdir(exist_ok=True)
    truths = []  # volumes go straight to disk; only truths stay in memory
    for i in range(spec.n_subjects):
        subject = generate_subject(spec, i)
        write_volume(volume_dir / f"{subject.subject_id}.mvol", subject.volume)
        truths.append(SimpleNamespace(subject_id=subject.subject_id, truth=subject.truth))
    labels = export_labels(truths, spec.missing_rate, spec.seed)
    reg = phantom_registry()
    write_labels_csv(out_dir / "labels.csv", labels, reg.names)
    write_registry(out_dir / "registry.txt", reg)
    manifest = {
        "n_subjects": spec.n_subjects,
        "n_unusable": int(np.count_nonzero(~labels.usable_rows())),
        "seed": spec.seed,
        "grid_dims": list(spec.grid_dims),
        "voxel_size": spec.voxel_size,
        "missing_rate": spec.missing_rate,
        "noise_sigma": spec.noise_sigma,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    return manifest


def run_project(volume_path, out_dir, pgm: bool = False) -> list[str]:
    """Project one volume to its tile file (plus optional PGM previews)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(volume_path).stem
    tile = project(read_volume(volume_path))
    written = []
    tile_path = out_dir / f"{stem}.mtil"
    write_tile(tile_path, tile)
    written.append(str(tile_path))
    if pgm:
        for c in range(tile.pixels.shape[0]):
            p = out_dir / f"{stem}_ch{c}.pgm"
            write_tile_pgm(p, tile, c)
            written.append(str(p))
    return written


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def predict_batches(params: ParameterSet, tiles: np.ndarray):
    """Forward in fixed-size batches; returns float64 (mu, s) in norm space."""
    mus = []
    ss = []
    for start in range(0, tiles.shape[0], PREDICT_BATCH):
        mu, s, _ = forward(params, tiles[start : start + PREDICT_BATCH])
        mus.append(np.asarray(mu, dtype=np.float64))
        ss.append(np.asarray(s, dtype=np.float64))
    if not mus:
        t = params.config.n_targets
        return np.zeros((0, t)), np.zeros((0, t))
    return np.concatenate(mus), np.concatenate(ss)


def raw_prediction(ckpt_like, tiles):
    """Denormalized means and uncalibrated sigmas for a tile stack."""
    mu_norm, s_norm = predict_batches(ckpt_like.params, tiles)
    stats = ckpt_like.norm_stats
    mean = stats.denormalize(mu_norm)
    sigma_raw = np.exp(0.5 * s_norm) * stats.std
    return mean, sigma_raw


def prediction_table(
    ckpt: ModelCheckpoint, tiles, subjects, level: float, fold=None
) -> PredictionTable:
    mean, sigma_raw = raw_prediction(ckpt, tiles)
    sigma_cal = sigma_raw * ckpt.calibration.factors
    low, high = confidence_interval(mean, sigma_cal, level)
    return PredictionTable(
        subjects=tuple(subjects),
        targets=ckpt.registry.names,
        mean=mean,
        sigma=sigma_cal,
        ci_low=low,
        ci_high=high,
        fold=fold,
    )


def run_predict(ckpt_path, volume_paths, out_csv, level: float = 0.95):
    """Predict each readable volume; returns (n_ok, errors, elapsed_s)."""
    ckpt = load_checkpoint(ckpt_path)
    t0 = time.perf_counter()
    dims = ckpt.net_config.input_dims
    tiles = []
    subjects = []
    errors: list[tuple[str, str]] = []
    for path in volume_paths:
        path = Path(path)
        try:
            tiles.append(tile_for_volume(read_volume(path), dims))
            subjects.append(path.stem)
        except (ValidationError, OSError) as exc:
            errors.append((str(path), str(exc)))
    stack = (
        np.stack(tiles)
        if tiles
        else np.zeros((0, *dims), dtype=np.float32)
    )
    table = prediction_table(ckpt, stack, subjects, level)
    write_predictions_csv(out_csv, table)
    return len(subjects), errors, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# Training entry points
# ---------------------------------------------------------------------------


def _single_fold_assignment(n: int):
    """Everything in fold 1 so fold 0 'validates' an empty set."""
    from .dataset import FoldAssignment

    return FoldAssignment(2, np.ones(n, dtype=int))


def _restrict(bundle: DataBundle, group: str | None):
    registry = bundle.registry if group is None else bundle.registry.filter_group(group)
    missing = [n for n in registry.names if n not in bundle.label_names]
    if missing:
        raise ValidationError(f"labels.csv lacks registry targets: {missing}")
    cols = [bundle.label_names.index(n) for n in registry.names]
    return registry, bundle.labels.select_targets(cols)


def _fold_checkpoint(
    registry, stats, calibration, params, run_cfg: RunConfig, fold_id
) -> ModelCheckpoint:
    t = run_cfg.training
    return ModelCheckpoint(
        registry=registry,
        norm_stats=stats,
        calibration=calibration,
        params=params,
        training_echo={
            "batch_size": t.batch_size,
            "total_iterations": t.total_iterations,
            "lr_stage1": t.lr_stage1,
            "lr_stage2": t.lr_stage2,
            "stage1_iterations": t.stage1_iterations,
            "adam_beta1": t.adam_beta1,
            "adam_beta2": t.adam_beta2,
            "adam_eps": t.adam_eps,
            "seed": t.seed,
            "augment_shift": t.augment_shift,
        },
        metadata={
            "tool": f"mimir {__version__}",
            "seed": t.seed,
            "fold_id": fold_id,
        },
    )


def run_train(data_dir, out_ckpt, run_cfg: RunConfig, k=None, fold_id=None, group=None):
    """Train one model; with --k/--fold-id the fold is held out."""
    bundle = load_data_dir(data_dir)
    registry, labels = _restrict(bundle, group)
    net_cfg = run_cfg.network(len(registry))
    tiles = subject_tiles(bundle, net_cfg.input_dims)
    if k is None:
        folds = _single_fold_assignment(labels.n_subjects)
        fold = 0
        fold_meta = None
    else:
        if fold_id is None or not (0 <= fold_id < k):
            raise ValidationError("--fold-id must be in [0, k)")
        # Stratify on the full label set: the stratum target may lie
        # outside the trained group.
        folds = make_folds(
            bundle.labels, k, run_cfg.strata_key, run_cfg.training.seed,
            registry=bundle.registry,
        )
        fold = fold_id
        fold_meta = fold_id
    params, stats, log = train(
        tiles, labels, folds, fold, net_cfg, run_cfg.training, target_names=registry.names
    )
    ckpt = _fold_checkpoint(
        registry,
        stats,
        CalibrationFactors.identity(registry.names, source="uncalibrated"),
        params,
        run_cfg,
        fold_meta,
    )
    save_checkpoint(out_ckpt, ckpt)
    log_path = Path(out_ckpt).with_suffix(".train_log.csv")
    write_training_log_csv(log_path, log)
    return ckpt, log


def run_calibrate(ckpt_path, data_dir, out_ckpt, out_csv=None, source=None):
    """Fit per-target sigma scale factors on a labeled data directory."""
    ckpt = load_checkpoint(ckpt_path)
    bundle = load_data_dir(data_dir)
    cols = [bundle.label_names.index(n) for n in ckpt.registry.names]
    labels = bundle.labels.select_targets(cols)
    tiles = subject_tiles(bundle, ckpt.net_config.input_dims)
    mean, sigma_raw = raw_prediction(ckpt, tiles)
    calibration = fit_calibration(
        mean,
        sigma_raw,
        labels.values,
        labels.masks,
        ckpt.registry.names,
        source=source or str(data_dir),
    )
    ckpt.calibration = calibration
    save_checkpoint(out_ckpt, ckpt)
    if out_csv:
        write_calibration_csv(out_csv, calibration)
    return calibration


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------


def run_cv(data_dir, out_dir, k: int, run_cfg: RunConfig, group=None, figures=True):
    """Full k-fold cross-validation over a data directory.

    Per fold: train on the remaining folds, predict the held-out fold,
    fit calibration on it, and save a checkpoint. Pooled validation
    predictions (one row per subject) are scored into the report.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = load_data_dir(data_dir)
    registry, labels = _restrict(bundle, group)
    net_cfg = run_cfg.network(len(registry))
    tiles = subject_tiles(bundle, net_cfg.input_dims)

    # Stratify on the full label set: the stratum target may lie outside
    # the trained group.
    folds = make_folds(
        bundle.labels, k, run_cfg.strata_key, run_cfg.training.seed,
        registry=bundle.registry,
    )
    write_folds_csv(out_dir / "folds.csv", labels.subjects, folds)

    n, t = labels.n_subjects, len(registry)
    mean = np.zeros((n, t))
    sigma = np.zeros((n, t))
    fold_manifest = []

    for fold_id in range(k):
        try:
            params, stats, log = train(
                tiles, labels, folds, fold_id, net_cfg, run_cfg.training,
                target_names=registry.names,
            )
        except DataError as exc:
            raise DataError(f"fold {fold_id}: {exc}") from exc
        val_rows = np.flatnonzero(folds.validation_rows(fold_id))
        holdout = _fold_checkpoint(
            registry,
            stats,
            CalibrationFactors.identity(registry.names),
            params,
            run_cfg,
            fold_id,
        )
        fold_mean, fold_sigma_raw = raw_prediction(holdout, tiles[val_rows])
        calibration = fit_calibration(
            fold_mean,
            fold_sigma_raw,
            labels.values[val_rows],
            labels.masks[val_rows],
            registry.names,
            source=f"fold-{fold_id}",
        )
        holdout.calibration = calibration
        save_checkpoint(out_dir / f"fold_{fold_id}.mckp", holdout)
        write_training_log_csv(out_dir / f"fold_{fold_id}.train_log.csv", log)
        write_calibration_csv(out_dir / f"fold_{fold_id}.calibration.csv", calibration)

        mean[val_rows] = fold_mean
        sigma[val_rows] = fold_sigma_raw * calibration.factors
        fold_manifest.append(
            {
                "fold": fold_id,
                "n_train": int(np.count_nonzero(folds.training_rows(fold_id))),
                "train_subjects": [
                    labels.subjects[i]
                    for i in np.flatnonzero(folds.training_rows(fold_id))
                ],
                "validation_subjects": [labels.subjects[i] for i in val_rows],
            }
        )

    low, high = confidence_interval(mean, sigma, run_cfg.ci_level)
    table = PredictionTable(
        subjects=labels.subjects,
        targets=registry.names,
        mean=mean,
        sigma=sigma,
        ci_low=low,
        ci_high=high,
        fold=folds.fold_of.copy(),
    )
    write_predictions_csv(out_dir / "predictions.csv", table)
    (out_dir / "fold_manifest.json").write_text(
        json.dumps(fold_manifest, sort_keys=True, indent=2) + "\n"
    )

    report = build_report(registry, table, labels, registry.names, run_cfg.threshold)
    write_report_csv(out_dir / "report.csv", report)
    if figures:
        render_report_figures(
            out_dir / "figures", report, table, labels, registry.names, registry,
            level=run_cfg.ci_level,
        )
    return table, report


# ---------------------------------------------------------------------------
# Evaluation of existing predictions
# ---------------------------------------------------------------------------


def infer_registry(names, labels: LabelMatrix) -> TargetRegistry:
    """Fallback registry: a target is binary iff its known values are 0/1."""
    specs = []
    for i, name in enumerate(names):
        known = labels.masks[:, i] == 1
        vals = labels.values[known, i]
        binary = vals.size > 0 and np.all(np.isin(vals, (0.0, 1.0)))
        specs.append(
            TargetSpec(name, "", KIND_BINARY if binary else KIND_CONTINUOUS, "")
        )
    return TargetRegistry(tuple(specs))


def run_evaluate(
    predictions_csv,
    labels_csv,
    out_csv,
    figures_dir=None,
    threshold: float = 0.5,
    registry_path=None,
    level: float = 0.95,
):
    from .formats import read_predictions_csv

    table = read_predictions_csv(predictions_csv)
    labels, names = read_labels_csv(labels_csv)
    if registry_path is not None:
        registry = read_registry(registry_path)
    else:
        registry = infer_registry(names, labels)
    registry = TargetRegistry(
        tuple(t for t in registry if t.name in table.targets and t.name in names)
    )
    if not len(registry):
        raise DataError("predictions and labels share no targets")
    aligned_table, aligned_labels = align_predictions(table, labels)
    report = build_report(registry, aligned_table, aligned_labels, names, threshold)
    write_report_csv(out_csv, report)
    if figures_dir is not None:
        render_report_figures(
            Path(figures_dir), report, aligned_table, aligned_labels, names, registry,
            level=level,
        )
    return report
