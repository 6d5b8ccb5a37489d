"""Post-hoc variance calibration and confidence intervals.

Predicted standard deviations from a mean-variance network tend to
understate the actual errors. A per-target multiplicative factor is
fitted on held-out predictions so the mean standardized squared residual
becomes exactly 1 on the fitting set; calibrated sigmas then define
central Gaussian confidence intervals.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import ValidationError

# Below this many points a target's factor is left at 1 and flagged.
MIN_CALIBRATION_POINTS = 10


@dataclass(frozen=True)
class CalibrationFactors:
    """Per-target multiplicative scale on predicted sigma."""

    targets: tuple[str, ...]
    factors: np.ndarray  # shape (T,), all finite and > 0
    n_points: np.ndarray  # shape (T,), int, points used per target
    calibrated: np.ndarray  # shape (T,), bool, False = defaulted to 1
    source: str = ""

    def __post_init__(self):
        if np.any(~np.isfinite(self.factors)) or np.any(self.factors <= 0):
            raise ValidationError("calibration factors must be finite and > 0")

    @classmethod
    def identity(cls, targets, source: str = "") -> "CalibrationFactors":
        t = tuple(targets)
        return cls(
            targets=t,
            factors=np.ones(len(t)),
            n_points=np.zeros(len(t), dtype=int),
            calibrated=np.zeros(len(t), dtype=bool),
            source=source,
        )


def fit_calibration(
    mu: np.ndarray,
    sigma: np.ndarray,
    values: np.ndarray,
    masks: np.ndarray,
    targets,
    source: str = "",
) -> CalibrationFactors:
    """Fit per-target scale factors from predictions on labeled data.

    All arrays are (n_subjects, n_targets). For each target the factor is
    the root mean standardized squared residual sqrt(mean((y-mu)^2/sigma^2))
    over mask=1 rows, so sigma_cal = factor * sigma gives mean standardized
    squared residual exactly 1 on this set. Targets with fewer than
    MIN_CALIBRATION_POINTS known rows keep factor 1 and are flagged.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    masks = np.asarray(masks)
    if not (mu.shape == sigma.shape == values.shape == masks.shape):
        raise ValidationError("prediction, label, and mask arrays must share shape")
    if mu.ndim != 2 or mu.shape[1] != len(tuple(targets)):
        raise ValidationError("arrays must be (n_subjects, n_targets)")

    targets = tuple(targets)
    n_t = len(targets)
    factors = np.ones(n_t)
    n_points = np.zeros(n_t, dtype=int)
    calibrated = np.zeros(n_t, dtype=bool)
    for t in range(n_t):
        known = masks[:, t] == 1
        n = int(np.count_nonzero(known))
        n_points[t] = n
        if n < MIN_CALIBRATION_POINTS:
            warnings.warn(
                f"target {targets[t]!r}: only {n} points, left uncalibrated",
                stacklevel=2,
            )
            continue
        s = sigma[known, t]
        if np.any(s <= 0):
            raise ValidationError(f"target {targets[t]!r}: non-positive sigma")
        z2 = ((values[known, t] - mu[known, t]) / s) ** 2
        factors[t] = float(np.sqrt(z2.mean()))
        calibrated[t] = True
    return CalibrationFactors(targets, factors, n_points, calibrated, source)


def two_sided_z(level: float) -> float:
    """Standard-normal quantile for a central interval at the given level."""
    if not (0.0 < level < 1.0):
        raise ValidationError("confidence level must be in (0, 1)")
    return float(ndtri(0.5 + level / 2.0))


def confidence_interval(mu, sigma_cal, level: float) -> tuple[np.ndarray, np.ndarray]:
    """Central Gaussian interval [mu - z*sigma, mu + z*sigma], elementwise."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma_cal = np.asarray(sigma_cal, dtype=np.float64)
    if np.any(sigma_cal < 0):
        raise ValidationError("sigma_cal must be >= 0")
    z = two_sided_z(level)
    half = z * sigma_cal
    return mu - half, mu + half


def coverage(low, high, truths, masks) -> float:
    """Fraction of mask=1 truths inside [low, high], bounds inclusive."""
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    masks = np.asarray(masks)
    known = masks == 1
    n = int(np.count_nonzero(known))
    if n == 0:
        raise ValidationError("coverage requires at least one unmasked point")
    inside = (truths[known] >= low[known]) & (truths[known] <= high[known])
    return float(np.count_nonzero(inside) / n)
