"""Model checkpoint persistence with a bit-exact binary format.

Layout (little-endian):

  "MCKP" | version u16 | meta_len u32 | meta JSON (utf-8)
  n_tensors u16 | per tensor: name_len u16, name, ndim u8, dims u32 each,
  data_len u64, float32 data (C order)

The JSON block carries the target registry, normalization statistics,
calibration factors, network configuration, a training-config echo, and
free-form creation metadata. Keys are sorted and floats use shortest
round-trip formatting, so save -> load -> save reproduces identical bytes.
Unknown versions and length fields that disagree with the file size are
rejected.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .dataset import NormStats, TargetRegistry, TargetSpec
from .errors import CheckpointError
from .model import ConvBlockSpec, NetworkConfig, ParameterSet
from .uncertainty import CalibrationFactors

CHECKPOINT_MAGIC = b"MCKP"
CHECKPOINT_VERSION = 1


@dataclass
class ModelCheckpoint:
    """Everything needed to run inference: registry, stats, net, factors."""

    registry: TargetRegistry
    norm_stats: NormStats
    calibration: CalibrationFactors
    params: ParameterSet
    training_echo: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def net_config(self) -> NetworkConfig:
        return self.params.config


def _meta_dict(ckpt: ModelCheckpoint) -> dict:
    cfg = ckpt.net_config
    return {
        "registry": [
            {"name": t.name, "unit": t.unit, "kind": t.kind, "group": t.group}
            for t in ckpt.registry
        ],
        "norm_stats": {
            "targets": list(ckpt.norm_stats.targets),
            "mean": [float(x) for x in ckpt.norm_stats.mean],
            "std": [float(x) for x in ckpt.norm_stats.std],
        },
        "calibration": {
            "targets": list(ckpt.calibration.targets),
            "factors": [float(x) for x in ckpt.calibration.factors],
            "n_points": [int(x) for x in ckpt.calibration.n_points],
            "calibrated": [bool(x) for x in ckpt.calibration.calibrated],
            "source": ckpt.calibration.source,
        },
        "network": {
            "input_dims": list(cfg.input_dims),
            "n_targets": cfg.n_targets,
            "conv_blocks": [[b.channels, b.pool] for b in cfg.conv_blocks],
            "init_seed": cfg.init_seed,
        },
        "training": ckpt.training_echo,
        "metadata": ckpt.metadata,
    }


def save_checkpoint(path, ckpt: ModelCheckpoint) -> None:
    meta = json.dumps(_meta_dict(ckpt), sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<4sHI", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(meta)))
        f.write(meta)
        f.write(struct.pack("<H", len(ckpt.params.tensors)))
        for name, tensor in ckpt.params.tensors.items():
            encoded = name.encode()
            data = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", tensor.ndim))
            f.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            f.write(struct.pack("<Q", len(data)))
            f.write(data)


class _Cursor:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: corrupted length field")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, spec: str):
        return struct.unpack(spec, self.take(struct.calcsize(spec)))


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "rb") as f:
        blob = f.read()
    cur = _Cursor(blob, path)
    magic, version, meta_len = cur.unpack("<4sHI")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        meta = json.loads(cur.take(meta_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable metadata block: {exc}") from exc

    try:
        registry = TargetRegistry(
            tuple(
                TargetSpec(t["name"], t["unit"], t["kind"], t["group"])
                for t in meta["registry"]
            )
        )
        ns = meta["norm_stats"]
        norm_stats = NormStats(
            tuple(ns["targets"]), np.asarray(ns["mean"]), np.asarray(ns["std"])
        )
        cal = meta["calibration"]
        calibration = CalibrationFactors(
            targets=tuple(cal["targets"]),
            factors=np.asarray(cal["factors"], dtype=np.float64),
            n_points=np.asarray(cal["n_points"], dtype=int),
            calibrated=np.asarray(cal["calibrated"], dtype=bool),
            source=cal["source"],
        )
        net = meta["network"]
        config = NetworkConfig(
            input_dims=tuple(net["input_dims"]),
            n_targets=int(net["n_targets"]),
            conv_blocks=tuple(ConvBlockSpec(int(c), bool(p)) for c, p in net["conv_blocks"]),
            init_seed=int(net["init_seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid metadata: {exc}") from exc

    (n_tensors,) = cur.unpack("<H")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = cur.unpack("<H")
        name = cur.take(name_len).decode()
        (ndim,) = cur.unpack("<B")
        dims = cur.unpack(f"<{ndim}I")
        (data_len,) = cur.unpack("<Q")
        expected = 4 * int(np.prod(dims, dtype=np.int64)) if ndim else 4
        if data_len != expected:
            raise CheckpointError(f"{path}: tensor {name}: corrupted length field")
        data = np.frombuffer(cur.take(data_len), dtype="<f4").reshape(dims)
        tensors[name] = data.copy()
    if cur.pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - cur.pos} trailing bytes")

    params = ParameterSet(config, tensors)
    return ModelCheckpoint(
        registry=registry,
        norm_stats=norm_stats,
        calibration=calibration,
        params=params,
        training_echo=meta.get("training", {}),
        metadata=meta.get("metadata", {}),
    )
