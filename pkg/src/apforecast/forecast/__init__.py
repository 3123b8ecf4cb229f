"""LSTM forecasters: windowing, forward pass, BPTT training, model tiers."""

from .model import (
    TIER_ARCHITECTURE,
    ForecastModel,
    ModelSpec,
    SpecError,
    forward,
    forward_batch,
    init_model,
    load_model,
    loss_and_gradients,
    model_storage,
    save_model,
)
from .data import SeriesNormalizer, WindowedDataset, WindowingError, window_series
from .train import (
    EpochStats,
    TrainConfig,
    TrainingDivergedError,
    gradient_check,
    train,
    train_cluster,
    train_global,
)

__all__ = [
    "TIER_ARCHITECTURE",
    "ForecastModel",
    "ModelSpec",
    "SpecError",
    "forward",
    "forward_batch",
    "init_model",
    "load_model",
    "loss_and_gradients",
    "model_storage",
    "save_model",
    "SeriesNormalizer",
    "WindowedDataset",
    "WindowingError",
    "window_series",
    "EpochStats",
    "TrainConfig",
    "TrainingDivergedError",
    "gradient_check",
    "train",
    "train_cluster",
    "train_global",
]
