"""Calibration factors, interval arithmetic, and coverage."""

import math

import numpy as np
import pytest

from mimir.errors import ValidationError
from mimir.uncertainty import (
    CalibrationFactors,
    confidence_interval,
    coverage,
    fit_calibration,
    two_sided_z,
)


def oracle_two_sided_z(level, tol=1e-12):
    """Invert the normal CDF by bisection on math.erf (independent route)."""
    target = 0.5 + level / 2.0
    lo, hi = 0.0, 10.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _fit_single(mu, sigma, y):
    mu = np.asarray(mu, dtype=float)[:, None]
    sigma = np.asarray(sigma, dtype=float)[:, None]
    y = np.asarray(y, dtype=float)[:, None]
    masks = np.ones_like(y, dtype=int)
    return fit_calibration(mu, sigma, y, masks, ("t",))


def test_factor_one_when_already_calibrated():
    # sigma equal to |residual| everywhere: mean standardized square is 1.
    resid = np.array([1.0, -2.0, 0.5, 3.0, -1.5, 2.5, -0.5, 1.0, -1.0, 2.0])
    cal = _fit_single(np.zeros(10), np.abs(resid), resid)
    assert cal.factors[0] == pytest.approx(1.0, rel=1e-12)
    assert cal.calibrated[0]


def test_factor_closed_form():
    # residuals {1, -1, 2} with unit sigma -> sqrt(6/3) = sqrt(2); pad the
    # pattern with matched-sigma points so the minimum count is met.
    resid = np.array([1.0, -1.0, 2.0] + [1.0] * 7)
    sigma = np.concatenate([np.ones(3), np.ones(7)])
    cal3 = np.sqrt(np.mean(resid[:3] ** 2 / sigma[:3] ** 2))
    assert cal3 == pytest.approx(math.sqrt(2.0), rel=1e-12)
    cal = _fit_single(np.zeros(10), sigma, resid)
    expected = np.sqrt(np.mean(resid**2))
    assert cal.factors[0] == pytest.approx(expected, rel=1e-12)


def test_factor_recovers_true_scale_monte_carlo():
    rng = np.random.default_rng(42)
    resid = rng.normal(scale=2.0, size=10_000)
    cal = _fit_single(np.zeros(10_000), np.ones(10_000), resid)
    assert cal.factors[0] == pytest.approx(2.0, abs=0.05)


def test_post_fit_identity_on_fitting_set():
    rng = np.random.default_rng(9)
    n = 500
    mu = rng.normal(size=(n, 2))
    sigma = np.abs(rng.normal(size=(n, 2))) + 0.1
    y = mu + rng.normal(size=(n, 2)) * sigma * 1.7
    masks = (rng.random((n, 2)) < 0.8).astype(int)
    cal = fit_calibration(mu, sigma, y, masks, ("a", "b"))
    for t in range(2):
        known = masks[:, t] == 1
        z2 = ((y[known, t] - mu[known, t]) / (cal.factors[t] * sigma[known, t])) ** 2
        assert z2.mean() == pytest.approx(1.0, rel=1e-9)


def test_too_few_points_defaults_to_one_with_warning():
    mu = np.zeros((5, 1))
    with pytest.warns(UserWarning, match="uncalibrated"):
        cal = fit_calibration(mu, np.ones((5, 1)), mu, np.ones((5, 1), int), ("t",))
    assert cal.factors[0] == 1.0
    assert not cal.calibrated[0]


def test_identity_factors():
    cal = CalibrationFactors.identity(("a", "b"))
    assert np.all(cal.factors == 1.0)
    assert not cal.calibrated.any()


def test_interval_worked_example():
    low, high = confidence_interval(np.array([10.0]), np.array([2.0]), 0.95)
    assert low[0] == pytest.approx(6.0801, abs=5e-5)
    assert high[0] == pytest.approx(13.9199, abs=5e-5)
    assert two_sided_z(0.95) == pytest.approx(1.959964, abs=1e-6)


def test_interval_zero_sigma_degenerate():
    low, high = confidence_interval(np.array([3.0]), np.array([0.0]), 0.95)
    assert low[0] == high[0] == 3.0


def test_interval_symmetry():
    # Both bounds come from one shared half-width; recovered half-widths
    # agree to the last ulp of the subtraction.
    mu = np.array([1.0, -2.0, 5.5])
    s = np.array([0.5, 2.0, 0.0])
    low, high = confidence_interval(mu, s, 0.9)
    np.testing.assert_allclose(mu - low, high - mu, rtol=0, atol=1e-15)
    assert low[2] == high[2] == mu[2]


def test_z_against_bisection_oracle():
    for level in (0.6827, 0.9, 0.95, 0.99):
        assert two_sided_z(level) == pytest.approx(oracle_two_sided_z(level), abs=1e-9)
    # One-sigma interval: half-width ~ 1.0 * sigma.
    assert two_sided_z(0.6827) == pytest.approx(1.0, abs=5e-4)


def test_interval_invalid_level():
    with pytest.raises(ValidationError):
        two_sided_z(1.0)
    with pytest.raises(ValidationError):
        two_sided_z(0.0)


def test_coverage_trivial_cases():
    truths = np.array([[1.0], [2.0]])
    masks = np.ones((2, 1), dtype=int)
    assert coverage(truths - 0.5, truths + 0.5, truths, masks) == 1.0
    assert coverage(truths + 1.0, truths + 2.0, truths, masks) == 0.0


def test_coverage_inclusive_bounds():
    truths = np.array([[1.0]])
    masks = np.ones((1, 1), dtype=int)
    assert coverage(np.array([[1.0]]), np.array([[2.0]]), truths, masks) == 1.0


def test_coverage_monte_carlo():
    rng = np.random.default_rng(7)
    n = 10_000
    mu = np.zeros((n, 1))
    sigma = np.full((n, 1), 1.0)
    truths = rng.normal(size=(n, 1))
    low, high = confidence_interval(mu, sigma, 0.95)
    cov = coverage(low, high, truths, np.ones((n, 1), int))
    assert cov == pytest.approx(0.95, abs=0.01)


def test_coverage_monotone_in_level():
    rng = np.random.default_rng(8)
    n = 2000
    mu = np.zeros((n, 1))
    sigma = np.ones((n, 1))
    truths = rng.normal(size=(n, 1))
    masks = np.ones((n, 1), int)
    prev = -1.0
    for level in (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99):
        low, high = confidence_interval(mu, sigma, level)
        cov = coverage(low, high, truths, masks)
        assert cov >= prev
        prev = cov


def test_coverage_requires_points():
    with pytest.raises(ValidationError):
        coverage(np.zeros((2, 1)), np.ones((2, 1)), np.zeros((2, 1)), np.zeros((2, 1), int))
