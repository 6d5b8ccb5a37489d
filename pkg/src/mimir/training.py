"""Masked heteroscedastic loss, Adam, and the two-stage training loop.

The loss is the Gaussian negative log-likelihood with the network's
per-entry predicted log-variance, multiplied by the availability mask so
missing labels contribute exactly zero, and averaged over the known
entries. The loop draws batches with replacement from the training folds
and drops the learning rate once after a fixed number of iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import (
    FoldAssignment,
    LabelMatrix,
    NormStats,
    compute_norm_stats,
    make_batch,
)
from .errors import DataError, ValidationError
from .model import NetworkConfig, ParameterSet, backward, forward, init_params


@dataclass(frozen=True)
class TrainingConfig:
    """Optimization schedule; the stage split defaults to 4/5 of the total."""

    batch_size: int = 32
    total_iterations: int = 2000
    lr_stage1: float = 5e-5
    lr_stage2: float = 5e-6
    stage1_iterations: int | None = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    # Training-time translation range in tile pixels. Kept small by
    # default so content near the tile edges is never shifted out.
    augment_shift: int = 1

    def __post_init__(self):
        if self.stage1_iterations is None:
            object.__setattr__(self, "stage1_iterations", 4 * self.total_iterations // 5)
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.total_iterations < 0:
            raise ValidationError("total_iterations must be >= 0")
        if not (0.0 < self.lr_stage2 <= self.lr_stage1):
            raise ValidationError("need 0 < lr_stage2 <= lr_stage1")
        if not (0 <= self.stage1_iterations <= self.total_iterations):
            raise ValidationError("need 0 <= stage1_iterations <= total_iterations")

    def lr_at(self, iteration: int) -> float:
        return self.lr_stage1 if iteration < self.stage1_iterations else self.lr_stage2


@dataclass(frozen=True)
class LossResult:
    """Masked NLL value with its gradients at the two heads."""

    loss: float
    grad_mu: np.ndarray
    grad_s: np.ndarray
    fully_masked: bool


def nll_loss(mu, s, y_norm, masks) -> LossResult:
    """Per-entry loss m * (exp(-s)*(y-mu)^2 + s) / 2, averaged over known
    entries (the additive Gaussian constant is dropped).

    A fully masked batch yields loss 0 with zero gradients and the
    ``fully_masked`` flag set.
    """
    mu = np.asarray(mu)
    s = np.asarray(s)
    y = np.asarray(y_norm)
    m = np.asarray(masks)
    if not (mu.shape == s.shape == y.shape == m.shape):
        raise ValidationError("loss arrays must share shape (N, T)")
    if not np.all((m == 0) | (m == 1)):
        raise ValidationError("masks must be 0 or 1")

    m = m.astype(mu.dtype)
    n_known = m.sum()
    if n_known == 0:
        zero = np.zeros_like(mu)
        return LossResult(0.0, zero, zero.copy(), True)

    # Masked residuals are forced to zero up front: a plain zero-multiply
    # would still propagate NaN from masked label slots.
    resid = np.where(m > 0, y - mu, 0.0)
    inv_var = np.exp(-s)
    per_entry = 0.5 * m * (inv_var * resid * resid + s)
    # Reduce over the known entries only: appending masked rows must not
    # change the value, and even added zeros would perturb the last bit
    # of a whole-array pairwise sum.
    loss = float(per_entry[m > 0].sum() / n_known)
    grad_mu = -(inv_var * resid * m) / n_known
    grad_s = 0.5 * m * (1.0 - inv_var * resid * resid) / n_known
    return LossResult(loss, grad_mu, grad_s, False)


@dataclass
class AdamState:
    """First/second moment accumulators and the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ParameterSet) -> "AdamState":
        return cls(
            m={k: np.zeros_like(t) for k, t in params.tensors.items()},
            v={k: np.zeros_like(t) for k, t in params.tensors.items()},
        )


def adam_step(
    params: ParameterSet,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    config: TrainingConfig,
) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    t = state.step + 1
    new_tensors = {}
    new_m = {}
    new_v = {}
    for name, theta in params.tensors.items():
        if name not in grads or grads[name].shape != theta.shape:
            raise ValidationError(f"gradient for {name} missing or mis-shaped")
        g = grads[name].astype(theta.dtype, copy=False)
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_tensors[name] = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return ParameterSet(params.config, new_tensors), AdamState(new_m, new_v, t)


@dataclass(frozen=True)
class TrainLogEntry:
    iteration: int
    lr: float
    loss: float


def train(
    tiles: np.ndarray,
    labels: LabelMatrix,
    folds: FoldAssignment,
    fold_id: int,
    net_config: NetworkConfig,
    train_config: TrainingConfig,
    target_names=None,
) -> tuple[ParameterSet, NormStats, list[TrainLogEntry]]:
    """Train one network on every fold except ``fold_id``.

    Tiles must already be at the network input size. Batches are drawn
    uniformly with replacement from training-fold subjects that have at
    least one known label; normalization statistics come from those same
    rows, so validation labels never influence the returned model.
    """
    if not (0 <= fold_id < folds.k):
        raise ValidationError(f"fold_id {fold_id} out of range for k={folds.k}")
    if tiles.shape[0] != labels.n_subjects:
        raise ValidationError("tiles and labels disagree on subject count")
    if net_config.n_targets != labels.n_targets:
        raise ValidationError(
            f"config expects {net_config.n_targets} targets, labels have {labels.n_targets}"
        )
    if target_names is None:
        target_names = tuple(f"t{i}" for i in range(labels.n_targets))

    train_rows = folds.training_rows(fold_id) & labels.usable_rows()
    row_indices = np.flatnonzero(train_rows)
    if row_indices.size == 0:
        raise DataError("no usable training rows (every subject masked or held out)")

    stats = compute_norm_stats(labels, train_rows, target_names)
    params = init_params(net_config)
    state = AdamState.zeros_like(params)
    sample_rng = np.random.default_rng(
        [train_config.seed & 0xFFFFFFFFFFFFFFFF, fold_id, 0xB]
    )

    log: list[TrainLogEntry] = []
    for it in range(train_config.total_iterations):
        lr = train_config.lr_at(it)
        idx = sample_rng.choice(row_indices, size=train_config.batch_size, replace=True)
        batch = make_batch(
            tiles,
            labels,
            stats,
            idx,
            augment=True,
            seed=[train_config.seed & 0xFFFFFFFFFFFFFFFF, fold_id, 0xA, it],
            max_shift=train_config.augment_shift,
        )
        mu, s, cache = forward(params, batch.inputs)
        result = nll_loss(mu, s, batch.y_norm, batch.masks)
        log.append(TrainLogEntry(it, lr, result.loss))
        if result.fully_masked:
            continue
        grads = backward(params, cache, result.grad_mu, result.grad_s)
        params, state = adam_step(params, grads, state, lr, train_config)
    return params, stats, log
