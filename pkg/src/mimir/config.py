"""Plain-text key=value run configuration.

One flat file configures phantom generation, the network, and training.
Lines are ``key = value``; blank lines and '#' comments are ignored.
Unknown keys are rejected so typos fail loudly. The MIMIR_SEED
environment variable overrides the master seed from any config file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError
from .model import DEFAULT_BLOCKS, ConvBlockSpec, NetworkConfig
from .phantom import PhantomSpec
from .training import TrainingConfig

SEED_ENV_VAR = "MIMIR_SEED"

DEFAULT_INPUT_DIMS = (2, 48, 32)

_KEYS = {
    # master seed (phantom, training, and network init unless overridden)
    "seed",
    # PhantomSpec
    "grid_dims",
    "voxel_size",
    "n_subjects",
    "missing_rate",
    "noise_sigma",
    # TrainingConfig
    "batch_size",
    "total_iterations",
    "lr_stage1",
    "lr_stage2",
    "stage1_iterations",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "augment_shift",
    # NetworkConfig
    "input_dims",
    "conv_blocks",
    "init_seed",
    # engine options
    "ci_level",
    "strata_key",
    "threshold",
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs, before the target count is known."""

    phantom: PhantomSpec
    training: TrainingConfig
    input_dims: tuple[int, int, int]
    conv_blocks: tuple[ConvBlockSpec, ...]
    init_seed: int
    ci_level: float = 0.95
    strata_key: str | None = "sex_analog"
    threshold: float = 0.5

    def network(self, n_targets: int) -> NetworkConfig:
        return NetworkConfig(
            input_dims=self.input_dims,
            n_targets=n_targets,
            conv_blocks=self.conv_blocks,
            init_seed=self.init_seed,
        )


def _parse_int_tuple(raw: str, key: str, n: int) -> tuple[int, ...]:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != n:
        raise ValidationError(f"config key {key}: expected {n} comma-separated ints")
    return tuple(int(p) for p in parts)


def parse_conv_blocks(raw: str) -> tuple[ConvBlockSpec, ...]:
    """'16p,32p,64' -> three blocks, 'p' marking a trailing 2x2 pool."""
    blocks = []
    for part in raw.split(","):
        part = part.strip().lower()
        pool = part.endswith("p")
        if pool:
            part = part[:-1]
        if not part.isdigit():
            raise ValidationError(f"config key conv_blocks: bad block {part!r}")
        blocks.append(ConvBlockSpec(int(part), pool))
    if not blocks:
        raise ValidationError("config key conv_blocks: empty")
    return tuple(blocks)


def read_key_values(path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ValidationError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = raw.strip()
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from defaults, an optional file, and overrides."""
    kv: dict[str, str] = {}
    if path is not None:
        kv.update(read_key_values(path))
    for key, val in (overrides or {}).items():
        if key not in _KEYS:
            raise ValidationError(f"unknown config override {key!r}")
        if val is not None:
            kv[key] = str(val)

    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            kv["seed"] = str(int(env_seed))
        except ValueError:
            raise ValidationError(f"{SEED_ENV_VAR} must be an integer") from None

    seed = int(kv.get("seed", "0"))

    phantom = PhantomSpec(
        grid_dims=_parse_int_tuple(kv["grid_dims"], "grid_dims", 3)
        if "grid_dims" in kv
        else (64, 64, 32),
        voxel_size=float(kv.get("voxel_size", "3.0")),
        seed=seed,
        n_subjects=int(kv.get("n_subjects", "100")),
        missing_rate=float(kv.get("missing_rate", "0.0")),
        noise_sigma=float(kv.get("noise_sigma", "0.05")),
    )
    training = TrainingConfig(
        batch_size=int(kv.get("batch_size", "32")),
        total_iterations=int(kv.get("total_iterations", "2000")),
        lr_stage1=float(kv.get("lr_stage1", "5e-5")),
        lr_stage2=float(kv.get("lr_stage2", "5e-6")),
        stage1_iterations=int(kv["stage1_iterations"])
        if "stage1_iterations" in kv
        else None,
        adam_beta1=float(kv.get("adam_beta1", "0.9")),
        adam_beta2=float(kv.get("adam_beta2", "0.999")),
        adam_eps=float(kv.get("adam_eps", "1e-8")),
        seed=seed,
        augment_shift=int(kv.get("augment_shift", "1")),
    )
    strata = kv.get("strata_key", "sex_analog")
    return RunConfig(
        phantom=phantom,
        training=training,
        input_dims=_parse_int_tuple(kv["input_dims"], "input_dims", 3)
        if "input_dims" in kv
        else DEFAULT_INPUT_DIMS,
        conv_blocks=parse_conv_blocks(kv["conv_blocks"])
        if "conv_blocks" in kv
        else tuple(ConvBlockSpec(c, p) for c, p in DEFAULT_BLOCKS),
        init_seed=int(kv["init_seed"]) if "init_seed" in kv else seed,
        ci_level=float(kv.get("ci_level", "0.95")),
        strata_key=None if strata.lower() in ("", "none") else strata,
        threshold=float(kv.get("threshold", "0.5")),
    )
