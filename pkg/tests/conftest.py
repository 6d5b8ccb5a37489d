"""Shared fixtures: a small phantom data directory and quick run config."""

import pytest

from mimir.engine import run_phantom
from mimir.phantom import PhantomSpec

# Default grid: the diabetes analog's threshold is calibrated to the
# default body proportions, so tiny test cohorts keep both classes.
SMALL_SPEC = PhantomSpec(seed=31, n_subjects=20, missing_rate=0.2, noise_sigma=0.05)

QUICK_CONFIG = """
seed = 31
total_iterations = 12
stage1_iterations = 9
batch_size = 8
input_dims = 2, 24, 16
conv_blocks = 4p, 8
n_subjects = 20
missing_rate = 0.2
"""


@pytest.fixture(scope="session")
def small_data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    run_phantom(SMALL_SPEC, out)
    return out


@pytest.fixture(scope="session")
def quick_config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "quick.cfg"
    path.write_text(QUICK_CONFIG)
    return path
