"""Mini-batch training with adaptive per-parameter steps and early stopping.

Updates follow the usual first/second-moment scheme (decay 0.9/0.999 with
bias correction); the loop keeps the best-validation checkpoint and stops
once validation MAE has failed to improve for more than ``patience`` epochs.
Batch order is a seeded permutation per epoch, so a fixed seed reproduces
the run exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..ingest import LoadSeries
from ..seeding import rng_for
from .data import WindowedDataset, window_series
from .model import ForecastModel, ModelSpec, _forward_cached, init_model, loss_and_gradients


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 3
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if not (0.0 < self.train_fraction < 1.0 and 0.0 < self.val_fraction < 1.0):
            raise ValueError("split fractions must lie in (0, 1)")
        if self.train_fraction + self.val_fraction >= 1.0:
            raise ValueError("train_fraction + val_fraction must be < 1")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("moment decays must lie in [0, 1)")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_mae: float


def _mean_abs_error(model: ForecastModel, inputs: np.ndarray, targets: np.ndarray) -> float:
    outputs, _ = _forward_cached(model.spec, model.params, inputs)
    return float(np.mean(np.abs(outputs - targets)))


def train(
    model: ForecastModel,
    dataset: WindowedDataset,
    config: TrainConfig,
) -> tuple[ForecastModel, list[EpochStats]]:
    """Fit ``model`` on the dataset's train split; returns the best-val copy.

    The history starts with an epoch-0 row holding the untrained validation
    MAE so improvement is measurable against the initial state. When the
    validation split is empty the train split stands in for early stopping.
    """
    train_idx = dataset.indices("train")
    if train_idx.size == 0:
        raise ValueError("training split is empty")
    val_idx = dataset.indices("val")
    if val_idx.size == 0:
        val_idx = train_idx

    x_train = dataset.inputs[train_idx]
    y_train = dataset.targets[train_idx]
    x_val = dataset.inputs[val_idx]
    y_val = dataset.targets[val_idx]

    work = model.copy()
    moments1 = {k: np.zeros_like(v) for k, v in work.params.items()}
    moments2 = {k: np.zeros_like(v) for k, v in work.params.items()}
    step = 0

    best_mae = _mean_abs_error(work, x_val, y_val)
    best_params = {k: v.copy() for k, v in work.params.items()}
    history = [EpochStats(epoch=0, train_loss=math.nan, val_mae=best_mae)]

    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng_for(config.seed, "batch-order", epoch).permutation(train_idx.size)
        epoch_sse = 0.0
        for lo in range(0, order.size, config.batch_size):
            batch = order[lo : lo + config.batch_size]
            loss, grads = loss_and_gradients(work, x_train[batch], y_train[batch])
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            epoch_sse += loss * batch.size
            step += 1
            bias1 = 1.0 - config.beta1**step
            bias2 = 1.0 - config.beta2**step
            for name, grad in grads.items():
                m1 = moments1[name]
                m2 = moments2[name]
                m1 *= config.beta1
                m1 += (1.0 - config.beta1) * grad
                m2 *= config.beta2
                m2 += (1.0 - config.beta2) * grad * grad
                work.params[name] -= (
                    config.learning_rate * (m1 / bias1) / (np.sqrt(m2 / bias2) + config.epsilon)
                )

        val_mae = _mean_abs_error(work, x_val, y_val)
        if not math.isfinite(val_mae):
            raise TrainingDivergedError(f"non-finite validation MAE at epoch {epoch}")
        history.append(EpochStats(epoch=epoch, train_loss=epoch_sse / order.size, val_mae=val_mae))

        if val_mae < best_mae:
            best_mae = val_mae
            best_params = {k: v.copy() for k, v in work.params.items()}
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break

    best = work.with_params(best_params)
    return best, history


def gradient_check(spec: ModelSpec, seed: int, eps: float = 1e-5, batch_size: int = 3) -> float:
    """Worst analytic-vs-central-difference gradient deviation on a random batch.

    Relative deviation where either side has magnitude, absolute where both
    are near zero; intended for tiny specs only (the sweep is O(params)
    forward passes).
    """
    model = init_model(spec, seed)
    rng = rng_for(seed, "gradient-check", spec.lstm_layers, spec.hidden_size)
    X = rng.uniform(0.0, 1.0, size=(batch_size, spec.lookback, spec.input_channels))
    T = rng.uniform(0.0, 1.0, size=(batch_size, spec.horizon))

    _, grads = loss_and_gradients(model, X, T)

    def loss_at() -> float:
        outputs, _ = _forward_cached(spec, model.params, X)
        diff = outputs - T
        return float(np.mean(diff * diff))

    worst = 0.0
    for name in sorted(model.params):
        tensor = model.params[name]
        analytic = grads[name]
        flat = tensor.reshape(-1)
        flat_grad = analytic.reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + eps
            plus = loss_at()
            flat[j] = original - eps
            minus = loss_at()
            flat[j] = original
            numeric = (plus - minus) / (2.0 * eps)
            scale = max(abs(numeric), abs(flat_grad[j]))
            if scale < 1e-6:
                deviation = abs(numeric - flat_grad[j])
            else:
                deviation = abs(numeric - flat_grad[j]) / scale
            worst = max(worst, deviation)
    return worst


def train_global(
    series: Sequence[LoadSeries],
    spec: ModelSpec,
    config: TrainConfig,
    stride: int = 1,
) -> tuple[ForecastModel, list[EpochStats]]:
    """Train one model on windows pooled across every series."""
    dataset = window_series(
        series,
        lookback=spec.lookback,
        horizon=spec.horizon,
        stride=stride,
        train_frac=config.train_fraction,
        val_frac=config.val_fraction,
        input_channels=spec.input_channels,
    )
    model = init_model(spec, config.seed)
    model.trained_on = "all"
    fitted, history = train(model, dataset, config)
    fitted.trained_on = "all"
    return fitted, history


def train_cluster(
    series: Sequence[LoadSeries],
    tier: str,
    cluster_index: int,
    lookback: int,
    horizon: int,
    config: TrainConfig,
    stride: int = 1,
    input_channels: int = 1,
) -> tuple[ForecastModel, list[EpochStats]]:
    """Train a cluster-specific tier model on the cluster's series only."""
    if not series:
        raise ValueError(f"cluster {cluster_index} has no series to train on")
    spec = ModelSpec.for_tier(tier, lookback=lookback, horizon=horizon, input_channels=input_channels)
    dataset = window_series(
        series,
        lookback=lookback,
        horizon=horizon,
        stride=stride,
        train_frac=config.train_fraction,
        val_frac=config.val_fraction,
        input_channels=input_channels,
    )
    model = init_model(spec, config.seed)
    model.trained_on = cluster_index
    fitted, history = train(model, dataset, config)
    fitted.trained_on = cluster_index
    return fitted, history
