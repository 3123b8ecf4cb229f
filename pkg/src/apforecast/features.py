"""Load transformation and the fixed 35-feature per-AP descriptor.

The descriptor concatenates global byte statistics (3), global user
statistics (2), stratified temporal statistics (24: bytes/users x
morning/afternoon/night x weekday/weekend x mean/std), and six usage-pattern
ratios. Order and names are stable across runs so downstream artifacts are
column-compatible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .ingest import LoadSeries

PERIODS = ("morning", "afternoon", "night")
DAY_TYPES = ("weekday", "weekend")
METRICS = ("bytes", "users")

USAGE_NAMES = (
    "peak_hour",
    "peak_to_mean_ratio",
    "night_load_ratio",
    "weekend_weekday_ratio",
    "zero_window_fraction",
    "low_byte_fraction",
)

FEATURE_NAMES: tuple[str, ...] = (
    ("bytes_mean", "bytes_std", "bytes_p90", "users_mean", "users_std")
    + tuple(
        f"{metric}_{period}_{day}_{stat}"
        for metric in METRICS
        for period in PERIODS
        for day in DAY_TYPES
        for stat in ("mean", "std")
    )
    + USAGE_NAMES
)

N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 35


class FeatureError(ValueError):
    """Invalid feature-extraction input."""


@dataclass(frozen=True)
class CalendarConfig:
    """Day-period boundaries and weekend definition.

    Periods must partition the 24-hour day: night is the complement of the
    morning and afternoon intervals, which must be adjacent and ordered.
    """

    morning: tuple[int, int] = (6, 12)
    afternoon: tuple[int, int] = (12, 18)
    weekend_days: tuple[int, ...] = (5, 6)  # Monday == 0
    timezone_offset_hours: float = 0.0

    def __post_init__(self) -> None:
        ms, me = self.morning
        as_, ae = self.afternoon
        if not (0 <= ms < me <= as_ < ae <= 24):
            raise FeatureError("morning/afternoon must be ordered, disjoint sub-intervals of [0,24)")
        if not all(0 <= d <= 6 for d in self.weekend_days):
            raise FeatureError("weekend_days must be in 0..6")

    def period_of(self, hour: np.ndarray) -> np.ndarray:
        """0 morning, 1 afternoon, 2 night."""
        period = np.full(hour.shape, 2, dtype=np.int8)
        period[(hour >= self.morning[0]) & (hour < self.morning[1])] = 0
        period[(hour >= self.afternoon[0]) & (hour < self.afternoon[1])] = 1
        return period


@dataclass(frozen=True)
class ByteTertiles:
    """Pooled 1/3 and 2/3 quantiles of transformed window loads."""

    low: float
    high: float

    def __post_init__(self) -> None:
        if self.low > self.high:
            raise FeatureError("tertile low must not exceed high")


@dataclass
class FeatureVector:
    ap_id: str
    values: np.ndarray
    names: tuple[str, ...] = FEATURE_NAMES
    coverage: np.ndarray = field(default_factory=lambda: np.ones(6, dtype=bool))

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (N_FEATURES,):
            raise FeatureError(f"expected {N_FEATURES} features, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise FeatureError("feature values must be finite")


@dataclass
class FeatureMatrix:
    ap_ids: list[str]
    values: np.ndarray
    names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise FeatureError("feature matrix shape does not match names")
        if len(self.ap_ids) != self.values.shape[0]:
            raise FeatureError("one row per ap_id required")


@dataclass
class Scaler:
    """Column-wise z-scoring parameters (population std)."""

    mean: np.ndarray
    std: np.ndarray
    zero_std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        safe = np.where(self.zero_std, 1.0, self.std)
        scaled = (values - self.mean) / safe
        return np.where(self.zero_std, 0.0, scaled)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "zero_std": self.zero_std.astype(bool).tolist(),
        }


def transform_load(series: LoadSeries, method: str = "cube_root") -> LoadSeries:
    """Elementwise variance-stabilising transform of window loads.

    ``cube_root`` maps x to x**(1/3); ``log1p`` maps x to ln(1+x). Both are
    monotone and fix zero, so zero-window bookkeeping survives the transform.
    """
    if method == "cube_root":
        transformed = np.cbrt(series.load)
    elif method == "log1p":
        transformed = np.log1p(series.load)
    else:
        raise FeatureError(f"unknown transform {method!r}")
    return LoadSeries(
        ap_id=series.ap_id,
        origin=series.origin,
        step_w=series.step_w,
        load=transformed,
        active_users=series.active_users.copy(),
    )


def compute_tertiles(loads: Iterable[np.ndarray] | np.ndarray) -> ByteTertiles:
    """Empirical 1/3 and 2/3 quantiles (linear interpolation) of pooled loads."""
    if isinstance(loads, np.ndarray):
        pooled = loads.ravel()
    else:
        parts = [np.asarray(part, dtype=float).ravel() for part in loads]
        pooled = np.concatenate(parts) if parts else np.empty(0)
    if pooled.size == 0:
        raise FeatureError("cannot compute tertiles of an empty pool")
    low, high = np.quantile(pooled, [1.0 / 3.0, 2.0 / 3.0])
    return ByteTertiles(low=float(low), high=float(high))


def _window_calendar(series: LoadSeries, calendar: CalendarConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(hour-of-day, period index, weekend mask) per window, by window start."""
    local = series.window_starts() + calendar.timezone_offset_hours * 3600.0
    hour = np.floor(local / 3600.0).astype(np.int64) % 24
    day = (np.floor(local / 86400.0).astype(np.int64) + 3) % 7
    weekend = np.isin(day, calendar.weekend_days)
    return hour, calendar.period_of(hour), weekend


def extract_features(
    series: LoadSeries,
    calendar: CalendarConfig,
    tertiles: ByteTertiles,
) -> FeatureVector:
    """Compute the 35-entry descriptor of one (already transformed) series.

    Strata with no windows yield mean = std = 0 and are flagged in the
    coverage mask (period-major: morning/afternoon/night x weekday/weekend).
    """
    loads = series.load
    users = series.active_users.astype(float)
    n = loads.size
    if n < 1:
        raise FeatureError("series must contain at least one window")

    hour, period, weekend = _window_calendar(series, calendar)

    values = np.zeros(N_FEATURES)
    values[0] = loads.mean()
    values[1] = loads.std()
    values[2] = np.quantile(loads, 0.9)
    values[3] = users.mean()
    values[4] = users.std()

    coverage = np.ones(6, dtype=bool)
    pos = 5
    for metric_values in (loads, users):
        for p_idx in range(len(PERIODS)):
            for is_weekend in (False, True):
                mask = (period == p_idx) & (weekend == is_weekend)
                stratum = p_idx * 2 + int(is_weekend)
                if mask.any():
                    values[pos] = metric_values[mask].mean()
                    values[pos + 1] = metric_values[mask].std()
                else:
                    coverage[stratum] = False
                pos += 2

    hourly_mean = np.zeros(24)
    for h in range(24):
        mask = hour == h
        if mask.any():
            hourly_mean[h] = loads[mask].mean()
    peak = int(np.argmax(hourly_mean))
    total = loads.sum()
    weekday_total = loads[~weekend].sum()
    weekend_total = loads[weekend].sum()

    values[29] = peak / 23.0
    values[30] = hourly_mean[peak] / values[0] if values[0] > 0 else 0.0
    # share ratios are mathematically in [0,1]; clip away summation-order ulps
    values[31] = min(loads[period == 2].sum() / total, 1.0) if total > 0 else 0.0
    values[32] = weekend_total / weekday_total if weekday_total > 0 else 0.0
    values[33] = float(np.mean(loads == 0.0))
    values[34] = float(np.mean(loads < tertiles.low))

    return FeatureVector(ap_id=series.ap_id, values=values, coverage=coverage)


def build_feature_matrix(
    series: Sequence[LoadSeries],
    calendar: CalendarConfig,
    tertiles: ByteTertiles,
) -> FeatureMatrix:
    vectors = [extract_features(s, calendar, tertiles) for s in series]
    return FeatureMatrix(
        ap_ids=[v.ap_id for v in vectors],
        values=np.vstack([v.values for v in vectors]) if vectors else np.empty((0, N_FEATURES)),
    )


def scale_features(matrix: FeatureMatrix | Sequence[FeatureVector]) -> tuple[FeatureMatrix, Scaler]:
    """Column z-scores with population std; constant columns map to 0."""
    if not isinstance(matrix, FeatureMatrix):
        vectors = list(matrix)
        matrix = FeatureMatrix(
            ap_ids=[v.ap_id for v in vectors],
            values=np.vstack([v.values for v in vectors]) if vectors else np.empty((0, N_FEATURES)),
        )
    if matrix.values.shape[0] < 2:
        raise FeatureError("scaling requires at least 2 rows")
    mean = matrix.values.mean(axis=0)
    std = matrix.values.std(axis=0)
    # Relative threshold keeps the z-scoring invariant under positive rescaling
    # of a column while still flagging constant columns that differ only by
    # accumulated rounding noise.
    magnitude = np.maximum(np.abs(matrix.values).max(axis=0), np.finfo(float).tiny)
    zero_std = std <= 1e-12 * magnitude
    scaler = Scaler(mean=mean, std=std, zero_std=zero_std)
    scaled = FeatureMatrix(ap_ids=list(matrix.ap_ids), values=scaler.apply(matrix.values), names=matrix.names)
    return scaled, scaler
