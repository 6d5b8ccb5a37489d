"""Synthetic volumetric subjects with analytic ground truth.

Each subject is a torso-like body: an ellipsoidal water-signal interior
(channel 0) wrapped in a fat-signal subcutaneous shell (channel 1), with
one bright interior ellipsoid organ and, for half the cohort, protruding
fat shoulder pads whose presence is the binary sex analog. Every target
value is a deterministic function of the noiseless volume (or of the
generating parameters where an analytic form exists), so a correct
learner can recover it and accuracy, calibration, and coverage become
testable.

Intensities are chosen so each target leaves a strong global trace in
the projected tiles: the organ dominates channel-0 mass against a dim
water background, the shell and pads dominate channel-1 mass, and a
fixed calibration marker pins the projection normalization scale.

Randomness is drawn from streams keyed by (seed, subject index, purpose),
so generating subjects in parallel or in any order is bit-identical to
serial generation, and image noise can be switched off without touching
geometry or truth values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .dataset import LabelMatrix, TargetRegistry, TargetSpec
from .errors import ValidationError
from .volume import VolumeGrid

# Signal intensities of the noiseless phantom. Water is dim and the organ
# bright, so organ volume dominates the channel-0 mass of the projected
# tile; fat structures own channel 1.
WATER_INTENSITY = 0.3
FAT_INTENSITY = 1.0
ORGAN_INTENSITY = 4.0

# Fixed calibration marker: a short line of deterministic intensity in a
# corner of channel 0, projecting brighter than any anatomy. The tile's
# max-normalization divisor is then a known constant, so absolute
# quantities (volumes, extents, signal sums) stay linearly readable from
# the normalized image instead of being scrambled by a subject-dependent
# scale. The line is kept short so its constant mass barely dilutes the
# anatomy statistics.
MARKER_HW = (2, 2)  # (h, w) voxel coordinates of the marker line
MARKER_LEN = 8  # voxels along the long axis
MARKER_PIXEL = 2.0  # projected coronal intensity; anatomy stays below ~1.6

# Body geometry, as fractions of the half-grid per axis. Bodies leave
# generous margins so translation augmentation never crops anatomy, and
# body-size spread is kept small so organ and fat signals dominate the
# tile statistics.
BODY_FRAC_D = (0.61, 0.67)
BODY_FRAC_H = (0.51, 0.545)
BODY_FRAC_W = (0.555, 0.585)
CENTER_JITTER = 1.5  # voxels
SHELL_THICKNESS = (1.5, 1.9)  # voxels

# Shoulder pads: lateral fat ellipsoids near the top of the body, present
# only for sex_analog = 1 (a pure morphology flag widening the silhouette).
PAD_POS_D = 0.55  # center along the body axis, in units of a_d
PAD_POS_H = 0.92  # center offset left/right, in units of a_h
PAD_AX_D = (4.2, 5.2)
PAD_AX_H = (4.6, 5.6)
PAD_AX_W = (6.2, 7.2)

# Organ ellipsoid, sized relative to the inner (water) region.
ORGAN_MIN_AX = (4.5, 4.0, 3.8)  # voxel floors keep rasterization within 5%
ORGAN_MAX_FRAC = (0.62, 0.72, 0.80)
ORGAN_OFFSET_D = (-0.15, 0.05)
ORGAN_OFFSET_HW = 0.08
ORGAN_FIT_BUDGET = 0.88  # corner-condition cap inside the inner ellipsoid

# Diabetes analog: noisy threshold on the fat fraction (percent units).
T2D_THRESHOLD = 42.0
T2D_JITTER = 2.5

_STREAM_GEOMETRY = 0
_STREAM_NOISE = 1
_STREAM_T2D = 2


@dataclass(frozen=True)
class PhantomSpec:
    """Generation parameters; identical specs give bit-identical output."""

    grid_dims: tuple[int, int, int] = (64, 64, 32)
    voxel_size: float = 3.0
    seed: int = 0
    n_subjects: int = 1
    missing_rate: float = 0.0
    noise_sigma: float = 0.05

    def __post_init__(self):
        d, h, w = self.grid_dims
        if min(d, h, w) < 8:
            raise ValidationError(f"grid_dims must all be >= 8, got {self.grid_dims}")
        if self.voxel_size <= 0:
            raise ValidationError("voxel_size must be > 0")
        if self.n_subjects < 0:
            raise ValidationError("n_subjects must be >= 0")
        if not (0.0 <= self.missing_rate <= 1.0):
            raise ValidationError(f"missing_rate must be in [0, 1], got {self.missing_rate}")
        if self.noise_sigma < 0:
            raise ValidationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass(frozen=True)
class PhantomSubject:
    """One generated subject: image plus its complete truth map."""

    subject_id: str
    volume: VolumeGrid
    truth: dict[str, float]


def registry() -> TargetRegistry:
    """The six phantom targets and their module groups."""
    return TargetRegistry(
        (
            TargetSpec("organ_volume", "ml", "continuous", "organs"),
            TargetSpec("fat_fraction", "%", "continuous", "body-composition"),
            TargetSpec("height_analog", "mm", "continuous", "anthropometric"),
            TargetSpec("weight_analog", "au", "continuous", "anthropometric"),
            TargetSpec("sex_analog", "flag", "binary", "anthropometric"),
            TargetSpec("t2d_analog", "flag", "binary", "experimental"),
        )
    )


def _subject_rng(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, index, stream])


def _fit_organ(offsets, axes, inner):
    """Shrink organ axes so its bounding box stays inside the inner ellipsoid.

    Solves sum(((|off_i| + g*ax_i)/inner_i)^2) = ORGAN_FIT_BUDGET for the
    largest shrink factor g <= 1.
    """
    p = np.abs(offsets) / inner
    q = axes / inner
    a = float(np.sum(q * q))
    b = float(np.sum(p * q))
    c = float(np.sum(p * p)) - ORGAN_FIT_BUDGET
    if c + 2 * b + a <= 0.0:  # g = 1 already fits
        return axes
    g = (-b + math.sqrt(max(b * b - a * c, 0.0))) / a
    return axes * min(max(g, 0.05), 1.0)


def generate_subject(spec: PhantomSpec, index: int) -> PhantomSubject:
    """Generate subject ``index`` of the cohort, independent of the others."""
    d_dim, h_dim, w_dim = spec.grid_dims
    rng = _subject_rng(spec.seed, index, _STREAM_GEOMETRY)

    # Body ellipsoid.
    a_d = 0.5 * d_dim * rng.uniform(*BODY_FRAC_D)
    a_h = 0.5 * h_dim * rng.uniform(*BODY_FRAC_H)
    a_w = 0.5 * w_dim * rng.uniform(*BODY_FRAC_W)
    center = np.array(
        [
            (d_dim - 1) / 2.0 + rng.uniform(-CENTER_JITTER, CENTER_JITTER),
            (h_dim - 1) / 2.0 + rng.uniform(-CENTER_JITTER, CENTER_JITTER),
            (w_dim - 1) / 2.0 + rng.uniform(-CENTER_JITTER, CENTER_JITTER),
        ]
    )
    thickness = rng.uniform(*SHELL_THICKNESS)

    sex = int(rng.random() < 0.5)
    pad_axes = np.array(
        [
            rng.uniform(*PAD_AX_D),
            rng.uniform(*PAD_AX_H),
            rng.uniform(*PAD_AX_W),
        ]
    )

    # Organ ellipsoid inside the shrunken (water) body.
    inner = np.array([a_d - thickness, a_h - thickness, a_w - thickness])
    organ_axes = np.array(
        [
            rng.uniform(ORGAN_MIN_AX[0], max(ORGAN_MIN_AX[0] + 0.3, ORGAN_MAX_FRAC[0] * inner[0])),
            rng.uniform(ORGAN_MIN_AX[1], max(ORGAN_MIN_AX[1] + 0.3, ORGAN_MAX_FRAC[1] * inner[1])),
            rng.uniform(ORGAN_MIN_AX[2], max(ORGAN_MIN_AX[2] + 0.3, ORGAN_MAX_FRAC[2] * inner[2])),
        ]
    )
    organ_off = np.array(
        [
            a_d * rng.uniform(*ORGAN_OFFSET_D),
            a_h * rng.uniform(-ORGAN_OFFSET_HW, ORGAN_OFFSET_HW),
            a_w * rng.uniform(-ORGAN_OFFSET_HW, ORGAN_OFFSET_HW),
        ]
    )
    organ_axes = _fit_organ(organ_off, organ_axes, inner)

    # Rasterize. Coordinates relative to the body center.
    dd = np.arange(d_dim, dtype=np.float64) - center[0]
    hh = np.arange(h_dim, dtype=np.float64) - center[1]
    ww = np.arange(w_dim, dtype=np.float64) - center[2]

    zeta = dd / a_d
    profile = np.sqrt(np.clip(1.0 - zeta**2, 0.0, None))
    b_h = np.maximum(a_h * profile, 1e-9)
    b_w = np.maximum(a_w * profile, 1e-9)

    rr_h = (hh[None, :, None] / b_h[:, None, None]) ** 2
    rr_w = (ww[None, None, :] / b_w[:, None, None]) ** 2
    body = (rr_h + rr_w <= 1.0) & (profile > 0.0)[:, None, None]

    b_h_in = np.maximum(b_h - thickness, 1e-9)
    b_w_in = np.maximum(b_w - thickness, 1e-9)
    rr_h_in = (hh[None, :, None] / b_h_in[:, None, None]) ** 2
    rr_w_in = (ww[None, None, :] / b_w_in[:, None, None]) ** 2
    water = (
        (rr_h_in + rr_w_in <= 1.0)
        & ((b_h - thickness) > 0.0)[:, None, None]
        & ((b_w - thickness) > 0.0)[:, None, None]
        & body
    )
    shell = body & ~water

    organ = (
        ((dd[:, None, None] - organ_off[0]) / organ_axes[0]) ** 2
        + ((hh[None, :, None] - organ_off[1]) / organ_axes[1]) ** 2
        + ((ww[None, None, :] - organ_off[2]) / organ_axes[2]) ** 2
    ) <= 1.0

    fat = shell
    if sex:
        for side in (-1.0, 1.0):
            pad = (
                ((dd[:, None, None] - PAD_POS_D * a_d) / pad_axes[0]) ** 2
                + ((hh[None, :, None] - side * PAD_POS_H * a_h) / pad_axes[1]) ** 2
                + ((ww[None, None, :]) / pad_axes[2]) ** 2
            ) <= 1.0
            fat = fat | pad

    clean = np.zeros((2, d_dim, h_dim, w_dim), dtype=np.float64)
    organ_in_water = organ & water
    clean[0] = WATER_INTENSITY * water
    clean[0][organ_in_water] = ORGAN_INTENSITY
    clean[1] = FAT_INTENSITY * fat
    clean[0, : min(MARKER_LEN, d_dim), MARKER_HW[0], MARKER_HW[1]] = (
        MARKER_PIXEL * w_dim
    )

    # Truth values from the noiseless volume / generating parameters.
    vv = spec.voxel_size**3
    s_water = clean[0].sum()
    s_fat = clean[1].sum()
    organ_volume_ml = (4.0 / 3.0) * math.pi * float(np.prod(organ_axes)) * vv / 1000.0
    fat_fraction = 100.0 * s_fat / (s_water + s_fat)
    body_slices = np.flatnonzero(body.any(axis=(1, 2)))
    height_mm = float(body_slices.size) * spec.voxel_size
    weight_au = (s_water + s_fat) * vv / 1000.0

    t2d_rng = _subject_rng(spec.seed, index, _STREAM_T2D)
    t2d = int(fat_fraction + t2d_rng.normal(0.0, T2D_JITTER) > T2D_THRESHOLD)

    voxels = clean
    if spec.noise_sigma > 0:
        noise_rng = _subject_rng(spec.seed, index, _STREAM_NOISE)
        voxels = clean + noise_rng.normal(0.0, spec.noise_sigma, size=clean.shape)
        np.clip(voxels, 0.0, None, out=voxels)

    truth = {
        "organ_volume": float(organ_volume_ml),
        "fat_fraction": float(fat_fraction),
        "height_analog": float(height_mm),
        "weight_analog": float(weight_au),
        "sex_analog": float(sex),
        "t2d_analog": float(t2d),
    }
    return PhantomSubject(
        subject_id=f"s{index:06d}",
        volume=VolumeGrid(voxels.astype(np.float32), spec.voxel_size),
        truth=truth,
    )


def generate_phantom(spec: PhantomSpec) -> Iterator[PhantomSubject]:
    """Yield the cohort one subject at a time (volumes can be large)."""
    for index in range(spec.n_subjects):
        yield generate_subject(spec, index)


def export_labels(subjects, missing_rate: float, seed: int) -> LabelMatrix:
    """Truth maps to a label matrix with independent per-entry dropout.

    Each (subject, target) value is masked out with probability
    ``missing_rate``. Values are retained behind the masks, so re-masking
    with a different seed changes masks, never values.
    """
    if not (0.0 <= missing_rate <= 1.0):
        raise ValidationError(f"missing_rate must be in [0, 1], got {missing_rate}")
    names = registry().names
    ids = []
    rows = []
    for s in subjects:
        ids.append(s.subject_id)
        rows.append([s.truth[name] for name in names])
    values = np.asarray(rows, dtype=np.float64).reshape(len(ids), len(names))
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0xD20])
    masks = (rng.random(values.shape) >= missing_rate).astype(np.int8)
    return LabelMatrix(tuple(ids), values, masks)
