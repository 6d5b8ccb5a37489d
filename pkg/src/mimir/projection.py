"""Compression of a two-channel volume into a fixed 2D tile.

Each channel is collapsed into two mean-intensity projections: a coronal
panel (average over the anterior-posterior axis) and a sagittal panel
(average over the left-right axis). Panels are laid out with the long
body axis D running horizontally and stacked vertically, coronal on top,
so a (C, D, H, W) volume becomes a (C, H + W, D) tile. The stacked tile
is normalized by its global maximum into [0, 1]; both channels share the
divisor, which keeps between-channel intensity ratios intact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .volume import N_CHANNELS, VolumeGrid

AXIS_LEFT_RIGHT = 2  # H axis of (D, H, W)
AXIS_ANT_POST = 3  # W axis


@dataclass(frozen=True)
class ProjectionTile:
    """A (2, H_tile, W_tile) float32 image with values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[0] != N_CHANNELS:
            raise ValidationError("tile must be (2, H, W)")

    @property
    def dims(self) -> tuple[int, int]:
        return self.pixels.shape[1:]


def project_panels(volume: VolumeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Raw mean projections before stacking and normalization.

    Returns (coronal, sagittal), shaped (C, H, D) and (C, W, D): each
    panel is transposed so the body long axis runs along columns.
    """
    volume.validate_finite_nonnegative()
    vox = volume.voxels
    coronal = vox.mean(axis=AXIS_ANT_POST).transpose(0, 2, 1)
    sagittal = vox.mean(axis=AXIS_LEFT_RIGHT).transpose(0, 2, 1)
    return coronal, sagittal


def project(volume: VolumeGrid) -> ProjectionTile:
    """Compress a volume to its normalized two-panel tile.

    An all-zero volume maps to an all-zero tile (no error).
    """
    coronal, sagittal = project_panels(volume)
    stacked = np.concatenate([coronal, sagittal], axis=1)
    peak = stacked.max()
    if peak > 0:
        stacked = stacked / peak
    return ProjectionTile(stacked.astype(np.float32))


def resize_tile(tile: ProjectionTile, target_dims: tuple[int, int]) -> ProjectionTile:
    """Bilinear resample to (height, width), half-pixel center convention.

    Identical target dims return the tile bit-for-bit; values stay inside
    the input range, so a [0, 1] tile remains in [0, 1].
    """
    th, tw = int(target_dims[0]), int(target_dims[1])
    if th < 1 or tw < 1:
        raise ValidationError(f"target_dims must be >= 1, got ({th}, {tw})")
    c, h, w = tile.pixels.shape
    if (th, tw) == (h, w):
        return ProjectionTile(tile.pixels.copy())

    out = tile.pixels.astype(np.float64)
    out = _interp_axis(out, axis=1, new_size=th)
    out = _interp_axis(out, axis=2, new_size=tw)
    return ProjectionTile(out.astype(np.float32))


def _interp_axis(arr: np.ndarray, axis: int, new_size: int) -> np.ndarray:
    old_size = arr.shape[axis]
    if new_size == old_size:
        return arr
    scale = old_size / new_size
    # Source coordinate of each output pixel center.
    src = (np.arange(new_size) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, old_size - 1.0)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, old_size - 1)
    frac = src - lo
    a = np.take(arr, lo, axis=axis)
    b = np.take(arr, hi, axis=axis)
    shape = [1, 1, 1]
    shape[axis] = new_size
    frac = frac.reshape(shape)
    return a * (1.0 - frac) + b * frac
