"""Target registry, label matrices, splits, normalization, and batching.

Labels are held as a dense (n_subjects, n_targets) value matrix plus a
0/1 availability mask; masked entries are carried but never read. All
statistics that feed training are computed from training rows only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ValidationError

KIND_CONTINUOUS = "continuous"
KIND_BINARY = "binary"

DEFAULT_AUGMENT_SHIFT = 8


@dataclass(frozen=True)
class TargetSpec:
    """One regression target: name, unit, value kind, and module group."""

    name: str
    unit: str
    kind: str
    group: str

    def __post_init__(self):
        if not self.name:
            raise ValidationError("target name must be non-empty")
        if self.kind not in (KIND_CONTINUOUS, KIND_BINARY):
            raise ValidationError(
                f"target {self.name!r}: kind must be continuous or binary"
            )


@dataclass(frozen=True)
class TargetRegistry:
    """Ordered collection of unique targets."""

    targets: tuple[TargetSpec, ...]

    def __post_init__(self):
        names = [t.name for t in self.targets]
        if len(set(names)) != len(names):
            raise ValidationError("target names must be unique")

    def __len__(self) -> int:
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.targets)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown target {name!r}") from None

    def get(self, name: str) -> TargetSpec:
        return self.targets[self.index(name)]

    def filter_group(self, group: str) -> "TargetRegistry":
        kept = tuple(t for t in self.targets if t.group == group)
        if not kept:
            raise ValidationError(f"no targets in group {group!r}")
        return TargetRegistry(kept)


@dataclass
class LabelMatrix:
    """Per-subject target values with availability masks."""

    subjects: tuple[str, ...]
    values: np.ndarray  # (n_subjects, n_targets) float64
    masks: np.ndarray  # same shape, int 0/1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.masks = np.asarray(self.masks, dtype=np.int8)
        if self.values.shape != self.masks.shape:
            raise ValidationError("values and masks must share shape")
        if self.values.ndim != 2 or self.values.shape[0] != len(self.subjects):
            raise ValidationError("values must be (n_subjects, n_targets)")
        if not np.all((self.masks == 0) | (self.masks == 1)):
            raise ValidationError("masks must be 0 or 1")
        if not np.all(np.isfinite(self.values[self.masks == 1])):
            raise ValidationError("unmasked label values must be finite")

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def n_targets(self) -> int:
        return self.values.shape[1]

    def usable_rows(self) -> np.ndarray:
        """True where a subject has at least one known value."""
        return self.masks.any(axis=1)

    def select_targets(self, indices) -> "LabelMatrix":
        idx = np.asarray(indices, dtype=int)
        return LabelMatrix(self.subjects, self.values[:, idx], self.masks[:, idx])


@dataclass(frozen=True)
class NormStats:
    """Per-target z-score statistics fitted on training rows only."""

    targets: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if np.any(self.std <= 0) or not np.all(np.isfinite(self.std)):
            raise ValidationError("normalization std must be finite and > 0")

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean


@dataclass(frozen=True)
class FoldAssignment:
    """Per-subject fold index in [0, k)."""

    k: int
    fold_of: np.ndarray  # (n_subjects,) int

    def __post_init__(self):
        if self.fold_of.min() < 0 or self.fold_of.max() >= self.k:
            raise ValidationError("fold indices must lie in [0, k)")

    def validation_rows(self, fold_id: int) -> np.ndarray:
        return self.fold_of == fold_id

    def training_rows(self, fold_id: int) -> np.ndarray:
        return self.fold_of != fold_id

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.k)


def make_folds(
    labels: LabelMatrix,
    k: int,
    strata_key: str | None,
    seed: int,
    registry: TargetRegistry | None = None,
) -> FoldAssignment:
    """Deterministic, optionally stratified k-fold split.

    Within each stratum subjects are shuffled and dealt cyclically across
    folds through one global counter, so per-stratum counts and overall
    fold sizes both differ by at most 1. Binary strata use their two
    values; continuous strata are quartile-binned over known values;
    subjects with a masked stratum value form their own stratum.
    """
    n = labels.n_subjects
    if k < 2:
        raise ValidationError("k must be >= 2")
    if k > n:
        raise ValidationError(f"k={k} exceeds the {n} available subjects")

    if strata_key is None:
        codes = np.zeros(n, dtype=int)
    else:
        if registry is not None:
            col = registry.index(strata_key)
            kind = registry.get(strata_key).kind
        else:
            raise ValidationError("stratified split requires a target registry")
        vals = labels.values[:, col]
        known = labels.masks[:, col] == 1
        codes = np.full(n, -1, dtype=int)
        if kind == KIND_BINARY:
            codes[known] = vals[known].astype(int)
        else:
            if np.any(known):
                edges = np.quantile(vals[known], [0.25, 0.5, 0.75])
                codes[known] = np.digitize(vals[known], edges)

    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=int)
    counter = 0
    for code in sorted(set(codes.tolist())):
        members = np.flatnonzero(codes == code)
        members = members[rng.permutation(members.size)]
        for row in members:
            assignment[row] = counter % k
            counter += 1
    return FoldAssignment(k, assignment)


def compute_norm_stats(labels: LabelMatrix, train_rows: np.ndarray, targets) -> NormStats:
    """Mean/std (ddof=1) per target over mask=1 training rows only.

    A target with fewer than 2 known training rows or zero spread is
    rejected: it cannot be trained in normalized space.
    """
    train_rows = np.asarray(train_rows, dtype=bool)
    if train_rows.shape != (labels.n_subjects,):
        raise ValidationError("train_rows must be a boolean row selector")
    targets = tuple(targets)
    if len(targets) != labels.n_targets:
        raise ValidationError("target list must match label columns")

    mean = np.zeros(labels.n_targets)
    std = np.zeros(labels.n_targets)
    for t in range(labels.n_targets):
        known = train_rows & (labels.masks[:, t] == 1)
        vals = labels.values[known, t]
        if vals.size < 2:
            raise DataError(
                f"target {targets[t]!r}: {vals.size} known training rows, need >= 2"
            )
        m = vals.mean()
        s = vals.std(ddof=1)
        if s == 0.0:
            raise DataError(f"target {targets[t]!r}: zero spread in training rows")
        mean[t] = m
        std[t] = s
    return NormStats(targets, mean, std)


@dataclass(frozen=True)
class Batch:
    """Stacked network inputs with z-normalized labels and masks."""

    inputs: np.ndarray  # (N, C, H, W) float32
    y_norm: np.ndarray  # (N, T) float64
    masks: np.ndarray  # (N, T) int8


def shift_tile(pixels: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate a (C, H, W) image by integer offsets with zero padding."""
    out = np.zeros_like(pixels)
    h, w = pixels.shape[1:]
    ys = slice(max(dy, 0), h + min(dy, 0))
    yd = slice(max(-dy, 0), h + min(-dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    xd = slice(max(-dx, 0), w + min(-dx, 0))
    out[:, ys, xs] = pixels[:, yd, xd]
    return out


def make_batch(
    tiles: np.ndarray,
    labels: LabelMatrix,
    norm_stats: NormStats,
    indices,
    augment: bool,
    seed,
    max_shift: int = DEFAULT_AUGMENT_SHIFT,
) -> Batch:
    """Assemble one training batch from pre-projected tiles.

    ``tiles`` is (n_subjects, C, H, W). With ``augment`` each selected
    tile is shifted by offsets drawn uniformly from [-max_shift,
    +max_shift] per axis, zero padded.
    """
    indices = np.asarray(indices, dtype=int)
    if tiles.ndim != 4:
        raise ValidationError("tiles must be (n_subjects, C, H, W)")
    if indices.min(initial=0) < 0 or indices.max(initial=-1) >= tiles.shape[0]:
        raise ValidationError("batch indices out of range")
    if tiles.shape[0] != labels.n_subjects:
        raise ValidationError("tiles and labels disagree on subject count")

    inputs = tiles[indices].astype(np.float32, copy=True)
    if augment:
        rng = np.random.default_rng(seed)
        shifts = rng.integers(-max_shift, max_shift + 1, size=(indices.size, 2))
        for i, (dy, dx) in enumerate(shifts):
            if dy or dx:
                inputs[i] = shift_tile(inputs[i], int(dy), int(dx))
    y_norm = norm_stats.normalize(labels.values[indices])
    masks = labels.masks[indices].copy()
    return Batch(inputs, y_norm, masks)
