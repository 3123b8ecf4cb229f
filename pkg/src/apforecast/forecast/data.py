"""Sliding-window dataset construction with leak-free chronological splits.

Windows are split 70/10/20 (train/val/test) per series in time order, and
min-max normalisers are fitted on the training prefix only, so no test-range
value ever influences scaling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..ingest import LoadSeries

SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST = 0, 1, 2
SPLIT_CODES = {"train": SPLIT_TRAIN, "val": SPLIT_VAL, "test": SPLIT_TEST}


class WindowingError(ValueError):
    """Invalid windowing arguments."""


@dataclass(frozen=True)
class SeriesNormalizer:
    """Per-series min-max scaling fitted on the training prefix."""

    load_min: float
    load_max: float
    users_min: float
    users_max: float

    @staticmethod
    def _scale(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
        if hi <= lo:
            return np.zeros_like(np.asarray(values, dtype=float))
        return (np.asarray(values, dtype=float) - lo) / (hi - lo)

    def normalize_load(self, values: np.ndarray) -> np.ndarray:
        return self._scale(values, self.load_min, self.load_max)

    def normalize_users(self, values: np.ndarray) -> np.ndarray:
        return self._scale(values, self.users_min, self.users_max)

    def denormalize_load(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float) * (self.load_max - self.load_min) + self.load_min


@dataclass
class WindowedDataset:
    inputs: np.ndarray            # (m, lookback, channels)
    targets: np.ndarray           # (m, horizon)
    series_ids: np.ndarray        # (m,) str
    split: np.ndarray             # (m,) int8
    window_starts: np.ndarray     # (m,) start index of each window in its series
    normalizers: dict[str, SeriesNormalizer]
    lookback: int
    horizon: int
    stride: int

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    def indices(self, split_name: str) -> np.ndarray:
        return np.flatnonzero(self.split == SPLIT_CODES[split_name])

    def subset(self, split_name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = self.indices(split_name)
        return self.inputs[idx], self.targets[idx], self.series_ids[idx]

    def series_count(self, split_name: str | None = None) -> int:
        ids = self.series_ids if split_name is None else self.series_ids[self.indices(split_name)]
        return int(np.unique(ids).size)


def window_series(
    series: Sequence[LoadSeries],
    lookback: int,
    horizon: int,
    stride: int = 1,
    train_frac: float = 0.7,
    val_frac: float = 0.1,
    input_channels: int = 1,
) -> WindowedDataset:
    """Pool normalized (input window, target window) pairs over ``series``.

    A series of length N yields floor((N - lookback - horizon)/stride) + 1
    windows; series shorter than lookback + horizon are skipped with a
    warning. ``input_channels`` 2 adds the active-user count as a second,
    independently normalised channel.
    """
    if lookback < 1 or horizon < 1:
        raise WindowingError("lookback and horizon must be >= 1")
    if stride < 1:
        raise WindowingError("stride must be >= 1")
    if input_channels not in (1, 2):
        raise WindowingError("input_channels must be 1 or 2")
    if not (0.0 < train_frac < 1.0 and 0.0 <= val_frac < 1.0 and train_frac + val_frac < 1.0):
        raise WindowingError("split fractions must satisfy 0 < train, 0 <= val, train + val < 1")

    inputs: list[np.ndarray] = []
    targets: list[np.ndarray] = []
    ids: list[str] = []
    splits: list[np.ndarray] = []
    starts_out: list[np.ndarray] = []
    normalizers: dict[str, SeriesNormalizer] = {}

    window_span = lookback + horizon
    for s in series:
        n = len(s)
        if n < window_span:
            warnings.warn(f"series {s.ap_id} has {n} windows < lookback+horizon={window_span}; skipped")
            continue
        m = (n - window_span) // stride + 1
        starts = stride * np.arange(m)
        n_train = int(np.floor(train_frac * m))
        n_val = int(np.floor(val_frac * m))
        split = np.full(m, SPLIT_TEST, dtype=np.int8)
        split[:n_train] = SPLIT_TRAIN
        split[n_train : n_train + n_val] = SPLIT_VAL

        prefix_end = int(starts[n_train - 1] + window_span) if n_train >= 1 else window_span
        load_prefix = s.load[:prefix_end]
        users_prefix = s.active_users[:prefix_end].astype(float)
        normalizer = SeriesNormalizer(
            load_min=float(load_prefix.min()),
            load_max=float(load_prefix.max()),
            users_min=float(users_prefix.min()),
            users_max=float(users_prefix.max()),
        )
        normalizers[s.ap_id] = normalizer

        load_norm = normalizer.normalize_load(s.load)
        strided = np.stack([load_norm[t : t + lookback] for t in starts])
        channels = [strided]
        if input_channels == 2:
            users_norm = normalizer.normalize_users(s.active_users.astype(float))
            channels.append(np.stack([users_norm[t : t + lookback] for t in starts]))
        inputs.append(np.stack(channels, axis=2))
        targets.append(np.stack([load_norm[t + lookback : t + window_span] for t in starts]))
        ids.extend([s.ap_id] * m)
        splits.append(split)
        starts_out.append(starts)

    if not inputs:
        raise WindowingError("no series long enough to window")

    return WindowedDataset(
        inputs=np.concatenate(inputs, axis=0),
        targets=np.concatenate(targets, axis=0),
        series_ids=np.asarray(ids, dtype=object),
        split=np.concatenate(splits),
        window_starts=np.concatenate(starts_out),
        normalizers=normalizers,
        lookback=lookback,
        horizon=horizon,
        stride=stride,
    )
