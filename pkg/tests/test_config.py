"""Key=value config parsing and the seed environment override."""

import pytest

from mimir.config import SEED_ENV_VAR, load_config, parse_conv_blocks
from mimir.errors import ValidationError
from mimir.model import ConvBlockSpec


def test_defaults_without_file():
    cfg = load_config(None)
    assert cfg.phantom.grid_dims == (64, 64, 32)
    assert cfg.training.batch_size == 32
    assert cfg.training.total_iterations == 2000
    assert cfg.training.stage1_iterations == 1600
    assert cfg.training.lr_stage1 == pytest.approx(5e-5)
    assert cfg.training.lr_stage2 == pytest.approx(5e-6)
    assert cfg.input_dims == (2, 48, 32)
    assert cfg.strata_key == "sex_analog"


def test_full_scale_stage_split_defaults():
    cfg = load_config(None, {"total_iterations": 10_000})
    assert cfg.training.stage1_iterations == 8000


def test_file_parsing(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        """
# comment line
seed = 99
grid_dims = 32, 32, 16
n_subjects = 7
noise_sigma = 0.0
total_iterations = 50
conv_blocks = 8p, 16
input_dims = 2, 16, 16
strata_key = none
"""
    )
    cfg = load_config(path)
    assert cfg.phantom.seed == 99
    assert cfg.training.seed == 99
    assert cfg.init_seed == 99
    assert cfg.phantom.grid_dims == (32, 32, 16)
    assert cfg.phantom.n_subjects == 7
    assert cfg.training.total_iterations == 50
    assert cfg.training.stage1_iterations == 40
    assert cfg.conv_blocks == (ConvBlockSpec(8, True), ConvBlockSpec(16, False))
    assert cfg.strata_key is None


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("learning_rate = 0.1\n")
    with pytest.raises(ValidationError, match="learning_rate"):
        load_config(path)
    path.write_text("no equals sign here\n")
    with pytest.raises(ValidationError, match="key = value"):
        load_config(path)


def test_conv_block_parsing():
    assert parse_conv_blocks("16p,32p,64") == (
        ConvBlockSpec(16, True),
        ConvBlockSpec(32, True),
        ConvBlockSpec(64, False),
    )
    with pytest.raises(ValidationError):
        parse_conv_blocks("16x")


def test_env_seed_overrides_config(tmp_path, monkeypatch):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 5\n")
    monkeypatch.setenv(SEED_ENV_VAR, "1234")
    cfg = load_config(path)
    assert cfg.phantom.seed == 1234
    assert cfg.training.seed == 1234
    monkeypatch.setenv(SEED_ENV_VAR, "not-an-int")
    with pytest.raises(ValidationError, match=SEED_ENV_VAR):
        load_config(path)


def test_overrides_beat_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("n_subjects = 3\nseed = 5\n")
    cfg = load_config(path, {"n_subjects": 11})
    assert cfg.phantom.n_subjects == 11
    assert cfg.phantom.seed == 5
