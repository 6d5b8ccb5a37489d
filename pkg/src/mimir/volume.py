"""Two-channel volumetric scalar fields.

Axis convention for the voxel array (C, D, H, W):
  C -- channel 0 water-like signal, channel 1 fat-like signal
  D -- long body axis (axis the height measurement runs along)
  H -- left-right axis
  W -- anterior-posterior axis
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

N_CHANNELS = 2


@dataclass(frozen=True)
class VolumeGrid:
    """A (2, D, H, W) float32 voxel array with isotropic spacing in mm."""

    voxels: np.ndarray
    voxel_size: float

    def __post_init__(self):
        if self.voxels.ndim != 4:
            raise ValidationError("voxels must be a 4D (C, D, H, W) array")
        if self.voxels.shape[0] != N_CHANNELS:
            raise ValidationError(
                f"voxels must have {N_CHANNELS} channels, got {self.voxels.shape[0]}"
            )
        if self.voxel_size <= 0:
            raise ValidationError("voxel_size must be > 0")

    @property
    def grid_dims(self) -> tuple[int, int, int]:
        return self.voxels.shape[1:]

    def validate_finite_nonnegative(self) -> None:
        if not np.all(np.isfinite(self.voxels)):
            raise ValidationError("volume contains non-finite voxels")
        if self.voxels.min() < 0:
            raise ValidationError("volume contains negative voxels")
