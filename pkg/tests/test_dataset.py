"""Registry, folds, normalization statistics, and batch assembly."""

import numpy as np
import pytest

from mimir.dataset import (
    LabelMatrix,
    TargetRegistry,
    TargetSpec,
    compute_norm_stats,
    make_batch,
    make_folds,
    shift_tile,
)
from mimir.errors import DataError, ValidationError


def make_labels(n, values=None, masks=None, n_targets=2):
    subjects = tuple(f"s{i:04d}" for i in range(n))
    if values is None:
        values = np.arange(n * n_targets, dtype=float).reshape(n, n_targets)
    if masks is None:
        masks = np.ones((n, n_targets), dtype=int)
    return LabelMatrix(subjects, values, masks)


def binary_registry():
    return TargetRegistry(
        (
            TargetSpec("flag", "1", "binary", "g"),
            TargetSpec("value", "mm", "continuous", "g"),
        )
    )


# ---------------------------------------------------------------------------
# Registry and label matrix
# ---------------------------------------------------------------------------


def test_registry_rejects_duplicates_and_bad_kind():
    with pytest.raises(ValidationError):
        TargetRegistry((TargetSpec("a", "u", "continuous", "g"),) * 2)
    with pytest.raises(ValidationError):
        TargetSpec("a", "u", "categorical", "g")


def test_registry_lookup_and_group_filter():
    reg = TargetRegistry(
        (
            TargetSpec("a", "u", "continuous", "organs"),
            TargetSpec("b", "u", "continuous", "body"),
            TargetSpec("c", "u", "binary", "organs"),
        )
    )
    assert reg.index("b") == 1
    assert reg.filter_group("organs").names == ("a", "c")
    with pytest.raises(ValidationError):
        reg.index("missing")
    with pytest.raises(ValidationError):
        reg.filter_group("nope")


def test_label_matrix_validates_masked_values():
    vals = np.array([[1.0, np.nan]])
    # NaN behind a mask is tolerated, NaN in a known entry is not.
    LabelMatrix(("s",), vals, np.array([[1, 0]]))
    with pytest.raises(ValidationError):
        LabelMatrix(("s",), vals, np.array([[1, 1]]))


def test_usable_rows():
    lab = make_labels(3, masks=np.array([[1, 0], [0, 0], [0, 1]]))
    assert lab.usable_rows().tolist() == [True, False, True]


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------


def test_folds_perfect_division():
    fa = make_folds(make_labels(10), 10, None, seed=0)
    assert fa.sizes().tolist() == [1] * 10


def test_folds_uneven_division_forced():
    fa = make_folds(make_labels(38_916, values=np.zeros((38_916, 1)),
                                masks=np.ones((38_916, 1), int), n_targets=1), 10, None, 0)
    sizes = sorted(fa.sizes().tolist())
    assert sizes == [3891] * 4 + [3892] * 6


def test_folds_partition_every_subject_once():
    fa = make_folds(make_labels(103), 7, None, seed=3)
    assert fa.sizes().sum() == 103
    assert np.ptp(fa.sizes()) <= 1
    union = np.zeros(103, dtype=int)
    for f in range(7):
        union += fa.validation_rows(f).astype(int)
    assert np.all(union == 1)


def test_folds_stratified_exact_counts():
    n = 100
    flag = np.zeros((n, 2))
    flag[:40, 0] = 1.0
    lab = make_labels(n, values=flag)
    fa = make_folds(lab, 5, "flag", seed=9, registry=binary_registry())
    for f in range(5):
        rows = fa.validation_rows(f)
        assert int(flag[rows, 0].sum()) == 8
        assert int(rows.sum()) == 20


def test_folds_stratified_counts_within_one():
    rng = np.random.default_rng(4)
    n = 83
    flag = np.zeros((n, 2))
    flag[:, 0] = rng.integers(0, 2, size=n)
    lab = make_labels(n, values=flag)
    k = 5
    fa = make_folds(lab, k, "flag", seed=1, registry=binary_registry())
    p = int(flag[:, 0].sum())
    for f in range(k):
        count = int(flag[fa.validation_rows(f), 0].sum())
        assert count in (p // k, -(-p // k))
    assert np.ptp(fa.sizes()) <= 1


def test_folds_stratified_continuous_quartiles():
    rng = np.random.default_rng(5)
    n = 80
    vals = np.zeros((n, 2))
    vals[:, 1] = rng.normal(size=n)
    lab = make_labels(n, values=vals)
    fa = make_folds(lab, 4, "value", seed=2, registry=binary_registry())
    # each quartile (20 subjects) deals 5 to each of the 4 folds
    edges = np.quantile(vals[:, 1], [0.25, 0.5, 0.75])
    codes = np.digitize(vals[:, 1], edges)
    for f in range(4):
        rows = fa.validation_rows(f)
        for q in range(4):
            assert np.count_nonzero(codes[rows] == q) == 5


def test_folds_deterministic_and_seed_sensitive():
    lab = make_labels(50)
    a = make_folds(lab, 5, None, seed=7).fold_of
    b = make_folds(lab, 5, None, seed=7).fold_of
    c = make_folds(lab, 5, None, seed=8).fold_of
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_folds_invalid_k_and_key():
    lab = make_labels(5)
    with pytest.raises(ValidationError):
        make_folds(lab, 1, None, 0)
    with pytest.raises(ValidationError):
        make_folds(lab, 6, None, 0)
    with pytest.raises(ValidationError):
        make_folds(lab, 2, "missing", 0, registry=binary_registry())


# ---------------------------------------------------------------------------
# Normalization statistics
# ---------------------------------------------------------------------------


def test_norm_stats_two_point():
    lab = make_labels(2, values=np.array([[2.0, 1.0], [4.0, 3.0]]))
    stats = compute_norm_stats(lab, np.array([True, True]), ("a", "b"))
    assert stats.mean[0] == pytest.approx(3.0)
    assert stats.std[0] == pytest.approx(np.sqrt(2.0))


def test_norm_stats_rejects_empty_and_constant():
    lab = make_labels(4, masks=np.array([[0, 1]] * 4))
    with pytest.raises(DataError, match="'a'"):
        compute_norm_stats(lab, np.ones(4, bool), ("a", "b"))
    const = make_labels(4, values=np.ones((4, 2)))
    with pytest.raises(DataError, match="zero spread"):
        compute_norm_stats(const, np.ones(4, bool), ("a", "b"))


def test_norm_stats_ignore_validation_rows():
    rng = np.random.default_rng(6)
    vals = rng.normal(size=(20, 2))
    lab = make_labels(20, values=vals.copy())
    train = np.zeros(20, dtype=bool)
    train[:10] = True
    stats = compute_norm_stats(lab, train, ("a", "b"))
    # mutate a validation row: stats must not change
    lab.values[15, 0] = 1e9
    stats2 = compute_norm_stats(lab, train, ("a", "b"))
    assert np.array_equal(stats.mean, stats2.mean)
    assert np.array_equal(stats.std, stats2.std)
    # direct recomputation oracle on a different training selection differs
    stats3 = compute_norm_stats(lab, ~train, ("a", "b"))
    assert not np.allclose(stats.mean, stats3.mean)


def test_norm_roundtrip_identity():
    rng = np.random.default_rng(7)
    vals = rng.normal(loc=50.0, scale=9.0, size=(30, 2))
    lab = make_labels(30, values=vals)
    stats = compute_norm_stats(lab, np.ones(30, bool), ("a", "b"))
    z = stats.normalize(vals)
    back = stats.denormalize(z)
    np.testing.assert_allclose(back, vals, rtol=1e-6)


# ---------------------------------------------------------------------------
# Batch assembly
# ---------------------------------------------------------------------------


def test_batch_without_augment_is_identity():
    rng = np.random.default_rng(8)
    tiles = rng.random((6, 2, 10, 8)).astype(np.float32)
    lab = make_labels(6)
    stats = compute_norm_stats(lab, np.ones(6, bool), ("a", "b"))
    batch = make_batch(tiles, lab, stats, [1, 3], augment=False, seed=0)
    assert np.array_equal(batch.inputs, tiles[[1, 3]])
    np.testing.assert_allclose(batch.y_norm, stats.normalize(lab.values[[1, 3]]))
    assert np.array_equal(batch.masks, lab.masks[[1, 3]])


def test_shift_pads_with_zeros():
    pixels = np.ones((2, 6, 6), dtype=np.float32)
    out = shift_tile(pixels, 3, 0)
    assert np.all(out[:, :3, :] == 0)
    assert np.all(out[:, 3:, :] == 1)
    out = shift_tile(pixels, 0, -2)
    assert np.all(out[:, :, -2:] == 0)
    assert np.all(out[:, :, :-2] == 1)


def test_batch_augment_deterministic_under_seed():
    rng = np.random.default_rng(9)
    tiles = rng.random((5, 2, 12, 12)).astype(np.float32)
    lab = make_labels(5)
    stats = compute_norm_stats(lab, np.ones(5, bool), ("a", "b"))
    b1 = make_batch(tiles, lab, stats, [0, 2, 4], augment=True, seed=123)
    b2 = make_batch(tiles, lab, stats, [0, 2, 4], augment=True, seed=123)
    b3 = make_batch(tiles, lab, stats, [0, 2, 4], augment=True, seed=124)
    assert np.array_equal(b1.inputs, b2.inputs)
    assert not np.array_equal(b1.inputs, b3.inputs)


def test_batch_shift_bounded():
    tiles = np.ones((3, 2, 20, 20), dtype=np.float32)
    lab = make_labels(3)
    stats = compute_norm_stats(lab, np.ones(3, bool), ("a", "b"))
    batch = make_batch(tiles, lab, stats, [0, 1, 2], augment=True, seed=5, max_shift=4)
    # at most 4 rows/cols of zeros can appear on any edge
    for img in batch.inputs:
        nz = np.argwhere(img[0] > 0)
        assert nz[:, 0].min() <= 4 and nz[:, 1].min() <= 4


def test_batch_rejects_bad_indices():
    tiles = np.ones((3, 2, 4, 4), dtype=np.float32)
    lab = make_labels(3)
    stats = compute_norm_stats(lab, np.ones(3, bool), ("a", "b"))
    with pytest.raises(ValidationError):
        make_batch(tiles, lab, stats, [5], augment=False, seed=0)
