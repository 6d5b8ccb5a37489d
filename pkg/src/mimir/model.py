"""A small convolutional backbone with per-target mean/log-variance heads.

Layout: a stack of 3x3 stride-1 same-padded conv layers with rectifier
activations and optional 2x2 average pooling, global average pooling,
and one dense layer emitting 2*T numbers per sample: T predicted means
followed by T predicted log-variances (so variance is positive by
construction). Forward and backward are plain numpy; gradients are exact
and finite-difference checkable at 64-bit precision.

Initialization is fan-in-scaled (scale sqrt(2/fan_in)) with zero biases;
the log-variance rows of the head start at zero, so every target begins
with unit predicted variance in normalized label space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError

DEFAULT_BLOCKS = ((16, True), (32, True), (64, False))


@dataclass(frozen=True)
class ConvBlockSpec:
    """One conv layer: output channels and whether a 2x2 pool follows."""

    channels: int
    pool: bool


def _as_blocks(blocks) -> tuple[ConvBlockSpec, ...]:
    out = []
    for b in blocks:
        if isinstance(b, ConvBlockSpec):
            out.append(b)
        else:
            ch, pool = b
            out.append(ConvBlockSpec(int(ch), bool(pool)))
    return tuple(out)


@dataclass(frozen=True)
class NetworkConfig:
    """Shapes of the backbone; all layer shapes are checked at construction."""

    input_dims: tuple[int, int, int]  # (C, H, W)
    n_targets: int
    conv_blocks: tuple[ConvBlockSpec, ...] = field(
        default_factory=lambda: _as_blocks(DEFAULT_BLOCKS)
    )
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_blocks", _as_blocks(self.conv_blocks))
        c, h, w = self.input_dims
        if c < 1:
            raise ValidationError("input_dims: need at least one channel")
        if h < 8 or w < 8:
            raise ValidationError(f"input_dims: spatial dims must be >= 8, got {h}x{w}")
        if self.n_targets < 1:
            raise ValidationError("n_targets must be >= 1")
        if not self.conv_blocks:
            raise ValidationError("conv_blocks must be non-empty")
        for i, b in enumerate(self.conv_blocks):
            if b.channels < 1:
                raise ValidationError(f"conv block {i}: channels must be >= 1")
            if b.pool:
                if h % 2 or w % 2:
                    raise ValidationError(
                        f"conv block {i}: cannot pool odd dims {h}x{w}"
                    )
                h //= 2
                w //= 2
        if h < 1 or w < 1:
            raise ValidationError("spatial dims collapse to zero")

    @property
    def feature_dim(self) -> int:
        return self.conv_blocks[-1].channels

    @property
    def head_outputs(self) -> int:
        return 2 * self.n_targets

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        """Ordered parameter tensor shapes derived from the config."""
        shapes: dict[str, tuple[int, ...]] = {}
        in_ch = self.input_dims[0]
        for i, b in enumerate(self.conv_blocks):
            shapes[f"conv{i}_w"] = (b.channels, in_ch, 3, 3)
            shapes[f"conv{i}_b"] = (b.channels,)
            in_ch = b.channels
        shapes["head_w"] = (self.head_outputs, self.feature_dim)
        shapes["head_b"] = (self.head_outputs,)
        return shapes


@dataclass
class ParameterSet:
    """Ordered named tensors for one network instance."""

    config: NetworkConfig
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = self.config.tensor_shapes()
        if list(self.tensors) != list(expected):
            raise ValidationError("parameter tensors do not match config layout")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValidationError(
                    f"tensor {name}: shape {self.tensors[name].shape}, want {shape}"
                )

    @property
    def dtype(self):
        return self.tensors["head_w"].dtype

    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet(
            self.config, {k: v.astype(dtype) for k, v in self.tensors.items()}
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors.values())


def init_params(
    config: NetworkConfig, seed: int | None = None, dtype=np.float32
) -> ParameterSet:
    """Fan-in-scaled random weights, zero biases, zero log-variance head."""
    if seed is None:
        seed = config.init_seed
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 101])
    tensors: dict[str, np.ndarray] = {}
    in_ch = config.input_dims[0]
    for i, b in enumerate(config.conv_blocks):
        fan_in = in_ch * 9
        tensors[f"conv{i}_w"] = rng.normal(
            0.0, np.sqrt(2.0 / fan_in), size=(b.channels, in_ch, 3, 3)
        ).astype(dtype)
        tensors[f"conv{i}_b"] = np.zeros(b.channels, dtype=dtype)
        in_ch = b.channels
    t = config.n_targets
    f = config.feature_dim
    head = np.zeros((2 * t, f))
    head[:t] = rng.normal(0.0, np.sqrt(2.0 / f), size=(t, f))
    tensors["head_w"] = head.astype(dtype)
    tensors["head_b"] = np.zeros(2 * t, dtype=dtype)
    return ParameterSet(config, tensors)


def _conv_cols(x: np.ndarray) -> np.ndarray:
    """im2col for a 3x3 same-padded convolution: (N*H*W, C*9)."""
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1 : h + 1, 1 : w + 1] = x
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (N, C, H, W, 3, 3)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * h * w, c * 9
    )


def forward(params: ParameterSet, inputs: np.ndarray):
    """Run the network on a batch.

    Returns (mu, s, cache) where mu and s are (N, T) predicted means and
    log-variances and cache holds what backward needs.
    """
    cfg = params.config
    x = np.asarray(inputs)
    if x.ndim != 4 or x.shape[1:] != tuple(cfg.input_dims):
        raise ValidationError(
            f"inputs shaped {x.shape}, config wants (N, {cfg.input_dims})"
        )
    x = x.astype(params.dtype, copy=False)
    n = x.shape[0]

    layers = []
    cur = x
    for i, b in enumerate(cfg.conv_blocks):
        h, w = cur.shape[2], cur.shape[3]
        cols = _conv_cols(cur)
        w_mat = params.tensors[f"conv{i}_w"].reshape(b.channels, -1)
        z = cols @ w_mat.T + params.tensors[f"conv{i}_b"]
        z = z.reshape(n, h, w, b.channels).transpose(0, 3, 1, 2)
        a = np.maximum(z, 0.0)
        if b.pool:
            pooled = 0.25 * (
                a[:, :, 0::2, 0::2]
                + a[:, :, 1::2, 0::2]
                + a[:, :, 0::2, 1::2]
                + a[:, :, 1::2, 1::2]
            )
        else:
            pooled = a
        layers.append({"cols": cols, "z": z, "in_hw": (h, w)})
        cur = pooled

    gap_in_hw = cur.shape[2] * cur.shape[3]
    g = cur.mean(axis=(2, 3))
    out = g @ params.tensors["head_w"].T + params.tensors["head_b"]
    t = cfg.n_targets
    cache = {
        "params": params,
        "layers": layers,
        "g": g,
        "last_hw": cur.shape[2:],
        "gap_size": gap_in_hw,
        "n": n,
    }
    return out[:, :t], out[:, t:], cache


def backward(
    params: ParameterSet, cache, grad_mu: np.ndarray, grad_s: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for every parameter tensor.

    grad_mu and grad_s are the loss gradients at the two heads, (N, T).
    """
    if cache.get("params") is not params:
        raise ValidationError("stale cache: backward must follow a matching forward")
    cfg = params.config
    n = cache["n"]
    dtype = params.dtype

    d_out = np.concatenate(
        [np.asarray(grad_mu, dtype=dtype), np.asarray(grad_s, dtype=dtype)], axis=1
    )
    grads: dict[str, np.ndarray] = {}
    grads["head_w"] = d_out.T @ cache["g"]
    grads["head_b"] = d_out.sum(axis=0)
    d_g = d_out @ params.tensors["head_w"]

    lh, lw = cache["last_hw"]
    d_cur = np.broadcast_to(
        (d_g / cache["gap_size"])[:, :, None, None], (n, cfg.feature_dim, lh, lw)
    ).astype(dtype, copy=True)

    for i in reversed(range(len(cfg.conv_blocks))):
        b = cfg.conv_blocks[i]
        layer = cache["layers"][i]
        h, w = layer["in_hw"]
        if b.pool:
            d_a = np.zeros((n, b.channels, h, w), dtype=dtype)
            q = 0.25 * d_cur
            d_a[:, :, 0::2, 0::2] = q
            d_a[:, :, 1::2, 0::2] = q
            d_a[:, :, 0::2, 1::2] = q
            d_a[:, :, 1::2, 1::2] = q
        else:
            d_a = d_cur
        d_z = d_a * (layer["z"] > 0)

        d_z_mat = d_z.transpose(0, 2, 3, 1).reshape(n * h * w, b.channels)
        grads[f"conv{i}_w"] = (d_z_mat.T @ layer["cols"]).reshape(b.channels, -1, 3, 3)
        grads[f"conv{i}_b"] = d_z_mat.sum(axis=0)

        if i > 0:
            in_ch = cfg.conv_blocks[i - 1].channels
            w_mat = params.tensors[f"conv{i}_w"].reshape(b.channels, -1)
            d_cols = d_z_mat @ w_mat  # (N*H*W, C*9)
            d_win = d_cols.reshape(n, h, w, in_ch, 3, 3).transpose(0, 3, 4, 5, 1, 2)
            d_xp = np.zeros((n, in_ch, h + 2, w + 2), dtype=dtype)
            for di in range(3):
                for dj in range(3):
                    d_xp[:, :, di : di + h, dj : dj + w] += d_win[:, :, di, dj]
            d_cur = d_xp[:, :, 1 : h + 1, 1 : w + 1]
    return grads
