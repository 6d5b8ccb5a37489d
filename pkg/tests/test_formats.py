"""File format round-trips and corruption rejection."""

import numpy as np
import pytest

from mimir.checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from mimir.dataset import LabelMatrix, NormStats, TargetRegistry, TargetSpec, make_folds
from mimir.errors import CheckpointError, ValidationError
from mimir.formats import (
    PredictionTable,
    read_folds_csv,
    read_labels_csv,
    read_predictions_csv,
    read_registry,
    read_tile,
    read_volume,
    write_folds_csv,
    write_labels_csv,
    write_predictions_csv,
    write_registry,
    write_tile,
    write_tile_pgm,
    write_volume,
)
from mimir.model import NetworkConfig, init_params
from mimir.projection import ProjectionTile
from mimir.uncertainty import CalibrationFactors
from mimir.volume import VolumeGrid


def test_volume_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    vol = VolumeGrid(rng.random((2, 10, 8, 6)).astype(np.float32), 2.5)
    path = tmp_path / "v.mvol"
    write_volume(path, vol)
    back = read_volume(path)
    assert np.array_equal(back.voxels, vol.voxels)
    assert back.voxel_size == pytest.approx(2.5)


def test_volume_rejects_corruption(tmp_path):
    vol = VolumeGrid(np.zeros((2, 8, 8, 8), dtype=np.float32), 1.0)
    path = tmp_path / "v.mvol"
    write_volume(path, vol)
    blob = path.read_bytes()
    (tmp_path / "bad_magic.mvol").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValidationError, match="magic"):
        read_volume(tmp_path / "bad_magic.mvol")
    (tmp_path / "short.mvol").write_bytes(blob[:-17])
    with pytest.raises(ValidationError, match="size"):
        read_volume(tmp_path / "short.mvol")
    bad_ver = blob[:4] + b"\x63\x00" + blob[6:]
    (tmp_path / "ver.mvol").write_bytes(bad_ver)
    with pytest.raises(ValidationError, match="version"):
        read_volume(tmp_path / "ver.mvol")


def test_tile_roundtrip_and_pgm(tmp_path):
    rng = np.random.default_rng(1)
    tile = ProjectionTile(rng.random((2, 7, 5)).astype(np.float32))
    path = tmp_path / "t.mtil"
    write_tile(path, tile)
    back = read_tile(path)
    assert np.array_equal(back.pixels, tile.pixels)

    pgm = tmp_path / "t0.pgm"
    write_tile_pgm(pgm, tile, channel=0)
    blob = pgm.read_bytes()
    assert blob.startswith(b"P5\n5 7\n255\n")
    assert len(blob) == len(b"P5\n5 7\n255\n") + 35


def test_labels_roundtrip_hides_masked_values(tmp_path):
    labels = LabelMatrix(
        ("a", "b"),
        np.array([[1.5, 2.0], [3.0, 4.25]]),
        np.array([[1, 0], [1, 1]]),
    )
    path = tmp_path / "labels.csv"
    write_labels_csv(path, labels, ("x", "y"))
    text = path.read_text()
    assert text.splitlines()[0] == "subject_id,x,x_mask,y,y_mask"
    back, names = read_labels_csv(path)
    assert names == ("x", "y")
    assert back.subjects == ("a", "b")
    assert np.array_equal(back.masks, labels.masks)
    known = labels.masks == 1
    assert np.array_equal(back.values[known], labels.values[known])
    assert back.values[0, 1] == 0.0  # masked slot reads as placeholder


def test_registry_roundtrip(tmp_path):
    reg = TargetRegistry(
        (
            TargetSpec("organ_volume", "ml", "continuous", "organs"),
            TargetSpec("sex_analog", "flag", "binary", "anthropometric"),
        )
    )
    path = tmp_path / "registry.txt"
    write_registry(path, reg)
    back = read_registry(path)
    assert back == reg
    (tmp_path / "bad.txt").write_text("just-one-field\n")
    with pytest.raises(ValidationError):
        read_registry(tmp_path / "bad.txt")


def test_folds_roundtrip(tmp_path):
    labels = LabelMatrix(
        tuple(f"s{i}" for i in range(7)), np.ones((7, 1)), np.ones((7, 1), int)
    )
    folds = make_folds(labels, 3, None, seed=0)
    path = tmp_path / "folds.csv"
    write_folds_csv(path, labels.subjects, folds)
    subjects, back = read_folds_csv(path)
    assert subjects == labels.subjects
    assert back.k == 3
    assert np.array_equal(back.fold_of, folds.fold_of)


def make_table(with_fold=False):
    rng = np.random.default_rng(3)
    mean = rng.normal(size=(3, 2))
    sigma = np.abs(rng.normal(size=(3, 2))) + 0.1
    return PredictionTable(
        subjects=("s0", "s1", "s2"),
        targets=("a", "b"),
        mean=mean,
        sigma=sigma,
        ci_low=mean - 2 * sigma,
        ci_high=mean + 2 * sigma,
        fold=np.array([0, 1, 0]) if with_fold else None,
    )


@pytest.mark.parametrize("with_fold", [False, True])
def test_predictions_roundtrip(tmp_path, with_fold):
    table = make_table(with_fold)
    path = tmp_path / "pred.csv"
    write_predictions_csv(path, table)
    back = read_predictions_csv(path)
    assert back.subjects == table.subjects
    assert back.targets == table.targets
    assert np.array_equal(back.mean, table.mean)
    assert np.array_equal(back.sigma, table.sigma)
    assert np.array_equal(back.ci_low, table.ci_low)
    assert np.array_equal(back.ci_high, table.ci_high)
    if with_fold:
        assert np.array_equal(back.fold, table.fold)
    else:
        assert back.fold is None


def test_prediction_table_invariants():
    t = make_table()
    with pytest.raises(ValidationError):
        PredictionTable(
            t.subjects, t.targets, t.mean, t.sigma, t.mean + 1.0, t.ci_high
        )
    with pytest.raises(ValidationError):
        PredictionTable(
            t.subjects, t.targets, t.mean, -t.sigma, t.ci_low, t.ci_high
        )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def make_checkpoint(seed=0):
    reg = TargetRegistry(
        (
            TargetSpec("a", "ml", "continuous", "organs"),
            TargetSpec("b", "flag", "binary", "anthropometric"),
        )
    )
    cfg = NetworkConfig(input_dims=(2, 8, 8), n_targets=2, conv_blocks=((3, True),), init_seed=seed)
    params = init_params(cfg)
    stats = NormStats(("a", "b"), np.array([1.0, 0.5]), np.array([2.0, 0.25]))
    cal = CalibrationFactors(
        ("a", "b"),
        np.array([1.25, 2.0]),
        np.array([40, 40]),
        np.array([True, True]),
        source="fold-0",
    )
    return ModelCheckpoint(
        registry=reg,
        norm_stats=stats,
        calibration=cal,
        params=params,
        training_echo={"batch_size": 32, "total_iterations": 10, "lr_stage1": 5e-05},
        metadata={"tool": "mimir 0.1.0", "seed": seed, "fold_id": 0},
    )


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    ckpt = make_checkpoint()
    p1 = tmp_path / "m1.mckp"
    p2 = tmp_path / "m2.mckp"
    save_checkpoint(p1, ckpt)
    loaded = load_checkpoint(p1)
    save_checkpoint(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.registry == ckpt.registry
    assert np.array_equal(loaded.norm_stats.mean, ckpt.norm_stats.mean)
    assert np.array_equal(loaded.calibration.factors, ckpt.calibration.factors)
    for name in ckpt.params.tensors:
        assert np.array_equal(loaded.params.tensors[name], ckpt.params.tensors[name])
    assert loaded.training_echo == ckpt.training_echo
    assert loaded.metadata == ckpt.metadata


def test_checkpoint_same_content_same_bytes(tmp_path):
    p1 = tmp_path / "a.mckp"
    p2 = tmp_path / "b.mckp"
    save_checkpoint(p1, make_checkpoint(seed=5))
    save_checkpoint(p2, make_checkpoint(seed=5))
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_rejects_corruption(tmp_path):
    path = tmp_path / "m.mckp"
    save_checkpoint(path, make_checkpoint())
    blob = path.read_bytes()

    (tmp_path / "magic.mckp").write_bytes(b"NOPE" + blob[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "magic.mckp")

    (tmp_path / "ver.mckp").write_bytes(blob[:4] + b"\x07\x00" + blob[6:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "ver.mckp")

    # meta_len pointing past the end of the file
    bad_len = blob[:6] + (2**31 - 1).to_bytes(4, "little") + blob[10:]
    (tmp_path / "len.mckp").write_bytes(bad_len)
    with pytest.raises(CheckpointError, match="length"):
        load_checkpoint(tmp_path / "len.mckp")

    (tmp_path / "trunc.mckp").write_bytes(blob[:-9])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "trunc.mckp")

    (tmp_path / "trail.mckp").write_bytes(blob + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "trail.mckp")
