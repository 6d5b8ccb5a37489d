"""On-disk formats: raw volumes, tiles, and the CSV interchange files.

Binary formats are little-endian with fixed magics:

  volume  "MVOL" | version u16 | D,H,W u32 | channels u8 | voxel_size f32
          followed by channel-major float32 voxels (C order within channel)
  tile    "MTIL" | version u16 | channels u8 | H,W u32
          followed by row-major float32 pixels

CSV files use '\\n' line endings and shortest round-trip float formatting,
so identical data produces identical bytes.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import FoldAssignment, LabelMatrix, TargetRegistry, TargetSpec
from .errors import ValidationError
from .projection import ProjectionTile
from .volume import N_CHANNELS, VolumeGrid

VOLUME_MAGIC = b"MVOL"
TILE_MAGIC = b"MTIL"
FORMAT_VERSION = 1


def fmt(x) -> str:
    """Shortest exact decimal representation of a float."""
    return repr(float(x))


# ---------------------------------------------------------------------------
# Volumes
# ---------------------------------------------------------------------------


def write_volume(path, volume: VolumeGrid) -> None:
    d, h, w = volume.grid_dims
    header = struct.pack(
        "<4sHIIIBf", VOLUME_MAGIC, FORMAT_VERSION, d, h, w, N_CHANNELS, volume.voxel_size
    )
    data = np.ascontiguousarray(volume.voxels, dtype="<f4")
    with open(path, "wb") as f:
        f.write(header)
        f.write(data.tobytes())


def read_volume(path) -> VolumeGrid:
    blob = Path(path).read_bytes()
    header_size = struct.calcsize("<4sHIIIBf")
    if len(blob) < header_size:
        raise ValidationError(f"{path}: truncated volume header")
    magic, version, d, h, w, channels, voxel_size = struct.unpack(
        "<4sHIIIBf", blob[:header_size]
    )
    if magic != VOLUME_MAGIC:
        raise ValidationError(f"{path}: not a volume file (bad magic)")
    if version != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported volume format version {version}")
    if channels != N_CHANNELS:
        raise ValidationError(f"{path}: expected {N_CHANNELS} channels, got {channels}")
    expected = header_size + 4 * channels * d * h * w
    if len(blob) != expected:
        raise ValidationError(
            f"{path}: size {len(blob)} does not match header ({expected} bytes)"
        )
    voxels = np.frombuffer(blob, dtype="<f4", offset=header_size).reshape(
        channels, d, h, w
    )
    return VolumeGrid(voxels.copy(), float(voxel_size))


# ---------------------------------------------------------------------------
# Tiles
# ---------------------------------------------------------------------------


def write_tile(path, tile: ProjectionTile) -> None:
    c, h, w = tile.pixels.shape
    header = struct.pack("<4sHBII", TILE_MAGIC, FORMAT_VERSION, c, h, w)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(tile.pixels, dtype="<f4").tobytes())


def read_tile(path) -> ProjectionTile:
    blob = Path(path).read_bytes()
    header_size = struct.calcsize("<4sHBII")
    if len(blob) < header_size:
        raise ValidationError(f"{path}: truncated tile header")
    magic, version, c, h, w = struct.unpack("<4sHBII", blob[:header_size])
    if magic != TILE_MAGIC:
        raise ValidationError(f"{path}: not a tile file (bad magic)")
    if version != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported tile format version {version}")
    if len(blob) != header_size + 4 * c * h * w:
        raise ValidationError(f"{path}: size does not match tile header")
    pixels = np.frombuffer(blob, dtype="<f4", offset=header_size).reshape(c, h, w)
    return ProjectionTile(pixels.copy())


def write_tile_pgm(path, tile: ProjectionTile, channel: int) -> None:
    """8-bit binary PGM of one channel for visual inspection."""
    img = tile.pixels[channel]
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------


def write_labels_csv(path, labels: LabelMatrix, names) -> None:
    names = tuple(names)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        header = ["subject_id"]
        for n in names:
            header += [n, f"{n}_mask"]
        writer.writerow(header)
        for i, sid in enumerate(labels.subjects):
            row = [sid]
            for t in range(len(names)):
                known = labels.masks[i, t] == 1
                row.append(fmt(labels.values[i, t]) if known else "")
                row.append("1" if known else "0")
            writer.writerow(row)


def read_labels_csv(path) -> tuple[LabelMatrix, tuple[str, ...]]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "subject_id" or (len(header) - 1) % 2:
            raise ValidationError(f"{path}: malformed labels header")
        names = tuple(header[1::2])
        for i, n in enumerate(names):
            if header[2 + 2 * i] != f"{n}_mask":
                raise ValidationError(f"{path}: expected column {n}_mask")
        subjects = []
        values = []
        masks = []
        for row in reader:
            if len(row) != len(header):
                raise ValidationError(f"{path}: row width mismatch at {row[:1]}")
            subjects.append(row[0])
            vals = []
            ms = []
            for t in range(len(names)):
                raw_v, raw_m = row[1 + 2 * t], row[2 + 2 * t]
                m = int(raw_m)
                ms.append(m)
                vals.append(float(raw_v) if m == 1 else 0.0)
            values.append(vals)
            masks.append(ms)
    n = len(subjects)
    values_arr = np.asarray(values, dtype=np.float64).reshape(n, len(names))
    masks_arr = np.asarray(masks, dtype=np.int8).reshape(n, len(names))
    return LabelMatrix(tuple(subjects), values_arr, masks_arr), names


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


def write_registry(path, registry: TargetRegistry) -> None:
    lines = ["# name, unit, kind, group"]
    for t in registry:
        lines.append(f"{t.name}, {t.unit}, {t.kind}, {t.group}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_registry(path) -> TargetRegistry:
    specs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise ValidationError(f"{path}:{lineno}: expected 'name, unit, kind, group'")
        specs.append(TargetSpec(*parts))
    if not specs:
        raise ValidationError(f"{path}: no targets defined")
    return TargetRegistry(tuple(specs))


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------


def write_folds_csv(path, subjects, folds: FoldAssignment) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["subject_id", "fold"])
        for sid, fold in zip(subjects, folds.fold_of):
            writer.writerow([sid, int(fold)])


def read_folds_csv(path) -> tuple[tuple[str, ...], FoldAssignment]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["subject_id", "fold"]:
            raise ValidationError(f"{path}: malformed folds header")
        subjects = []
        fold_of = []
        for row in reader:
            subjects.append(row[0])
            fold_of.append(int(row[1]))
    arr = np.asarray(fold_of, dtype=int)
    return tuple(subjects), FoldAssignment(int(arr.max()) + 1, arr)


# ---------------------------------------------------------------------------
# Predictions
# ---------------------------------------------------------------------------


@dataclass
class PredictionTable:
    """Per-subject predicted mean, calibrated sigma, and interval bounds."""

    subjects: tuple[str, ...]
    targets: tuple[str, ...]
    mean: np.ndarray  # (n, T)
    sigma: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    fold: np.ndarray | None = None  # (n,) int, present for pooled CV output

    def __post_init__(self):
        n, t = len(self.subjects), len(self.targets)
        for name in ("mean", "sigma", "ci_low", "ci_high"):
            arr = getattr(self, name)
            if arr.shape != (n, t):
                raise ValidationError(f"prediction array {name} must be ({n}, {t})")
        if np.any(self.sigma < 0):
            raise ValidationError("prediction sigma must be >= 0")
        if np.any(self.ci_low > self.mean) or np.any(self.mean > self.ci_high):
            raise ValidationError("intervals must satisfy low <= mean <= high")

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)


def write_predictions_csv(path, table: PredictionTable) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        header = ["subject_id"]
        if table.fold is not None:
            header.append("fold")
        for t in table.targets:
            header += [f"{t}_mean", f"{t}_sigma", f"{t}_ci_low", f"{t}_ci_high"]
        writer.writerow(header)
        for i, sid in enumerate(table.subjects):
            row = [sid]
            if table.fold is not None:
                row.append(int(table.fold[i]))
            for t in range(len(table.targets)):
                row += [
                    fmt(table.mean[i, t]),
                    fmt(table.sigma[i, t]),
                    fmt(table.ci_low[i, t]),
                    fmt(table.ci_high[i, t]),
                ]
            writer.writerow(row)


def read_predictions_csv(path) -> PredictionTable:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "subject_id":
            raise ValidationError(f"{path}: malformed predictions header")
        has_fold = len(header) > 1 and header[1] == "fold"
        offset = 2 if has_fold else 1
        cols = header[offset:]
        if len(cols) % 4:
            raise ValidationError(f"{path}: expected 4 columns per target")
        targets = []
        for i in range(0, len(cols), 4):
            if not cols[i].endswith("_mean"):
                raise ValidationError(f"{path}: expected *_mean column, got {cols[i]}")
            targets.append(cols[i][: -len("_mean")])
        subjects = []
        folds = []
        rows = []
        for row in reader:
            subjects.append(row[0])
            if has_fold:
                folds.append(int(row[1]))
            rows.append([float(x) for x in row[offset:]])
    data = np.asarray(rows, dtype=np.float64).reshape(len(subjects), len(targets), 4)
    return PredictionTable(
        subjects=tuple(subjects),
        targets=tuple(targets),
        mean=data[:, :, 0],
        sigma=data[:, :, 1],
        ci_low=data[:, :, 2],
        ci_high=data[:, :, 3],
        fold=np.asarray(folds, dtype=int) if has_fold else None,
    )


# ---------------------------------------------------------------------------
# Other delimited outputs
# ---------------------------------------------------------------------------


def write_training_log_csv(path, log) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["iteration", "lr", "loss"])
        for entry in log:
            writer.writerow([entry.iteration, fmt(entry.lr), fmt(entry.loss)])


def write_calibration_csv(path, calibration) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["target", "factor", "n_points"])
        for i, t in enumerate(calibration.targets):
            writer.writerow([t, fmt(calibration.factors[i]), int(calibration.n_points[i])])
