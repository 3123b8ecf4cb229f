"""Prediction-error metrics and per-cluster performance-table assembly.

MAE is computed in normalized units (matching how the forecasters are
trained); the 99th-percentile absolute error is reported in MB after
denormalising back to bytes, with 1 MB = 2^20 bytes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .forecast.data import WindowedDataset
from .forecast.model import ForecastModel, forward_batch

MB = float(2**20)


class EvalError(ValueError):
    """Invalid metric input."""


def mae(target: np.ndarray, prediction: np.ndarray) -> float:
    """Mean absolute deviation over one forecast window."""
    t = np.asarray(target, dtype=float)
    p = np.asarray(prediction, dtype=float)
    if t.shape != p.shape:
        raise EvalError(f"length mismatch: {t.shape} vs {p.shape}")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(p))):
        raise EvalError("metric inputs must be finite")
    return float(np.mean(np.abs(t - p)))


@dataclass(frozen=True)
class AggregateError:
    overall: float
    per_cluster: dict[int, float]
    window_counts: dict[int, int]


def aggregate_error(per_cluster_errors: Mapping[int, Sequence[float]]) -> AggregateError:
    """Mean per-window error pooled over all clusters, with per-cluster means.

    The pooled mean weights every evaluated window equally, so it equals the
    window-count-weighted mean of the per-cluster means.
    """
    if not per_cluster_errors:
        raise EvalError("no errors to aggregate")
    per_cluster: dict[int, float] = {}
    counts: dict[int, int] = {}
    total = 0.0
    n = 0
    for cluster, errors in per_cluster_errors.items():
        arr = np.asarray(list(errors), dtype=float)
        if arr.size == 0:
            raise EvalError(f"cluster {cluster} has no errors")
        per_cluster[int(cluster)] = float(arr.mean())
        counts[int(cluster)] = int(arr.size)
        total += float(arr.sum())
        n += arr.size
    return AggregateError(overall=total / n, per_cluster=per_cluster, window_counts=counts)


def p99_abs_error(
    targets: np.ndarray,
    predictions: np.ndarray,
    denormalize: Callable[[np.ndarray], np.ndarray] | None = None,
) -> float:
    """Empirical 99th percentile (linear interpolation) of |error| in MB.

    Horizon steps are pooled. ``denormalize`` maps normalized values back to
    bytes; pass ``None`` when the inputs are already bytes.
    """
    t = np.asarray(targets, dtype=float).ravel()
    p = np.asarray(predictions, dtype=float).ravel()
    if t.size == 0:
        raise EvalError("need at least one error sample")
    if t.shape != p.shape:
        raise EvalError("targets and predictions must align")
    if denormalize is not None:
        t = np.asarray(denormalize(t), dtype=float)
        p = np.asarray(denormalize(p), dtype=float)
    errors_mb = np.abs(t - p) / MB
    return float(np.quantile(errors_mb, 0.99))


def improvement(base_mae: float, new_mae: float) -> float:
    """Relative error reduction (base - new) / base."""
    if base_mae <= 0:
        raise EvalError("base MAE must be positive")
    return (base_mae - new_mae) / base_mae


@dataclass(frozen=True)
class PerformanceRow:
    cluster: int
    tier: str
    horizon_minutes: int
    mae: float
    p99_mb: float
    storage_bytes: float
    n_series: int

    def __post_init__(self) -> None:
        if self.mae < 0 or self.p99_mb < 0:
            raise EvalError("mae and p99 must be non-negative")


@dataclass
class PerformanceTable:
    rows: list[PerformanceRow] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, row: PerformanceRow) -> None:
        if self.get(row.cluster, row.tier, row.horizon_minutes) is not None:
            raise EvalError(
                f"duplicate row for cluster={row.cluster} tier={row.tier} horizon={row.horizon_minutes}"
            )
        self.rows.append(row)

    def get(self, cluster: int, tier: str, horizon_minutes: int) -> PerformanceRow | None:
        for row in self.rows:
            if row.cluster == cluster and row.tier == tier and row.horizon_minutes == horizon_minutes:
                return row
        return None

    def clusters(self) -> list[int]:
        return sorted({row.cluster for row in self.rows})

    def horizons(self) -> list[int]:
        return sorted({row.horizon_minutes for row in self.rows})

    def tiers_for(self, cluster: int, horizon_minutes: int) -> list[str]:
        return sorted(
            row.tier for row in self.rows
            if row.cluster == cluster and row.horizon_minutes == horizon_minutes
        )

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["cluster", "tier", "horizon_minutes", "mae", "p99_mb", "storage_bytes", "n_series", "seed"]
            )
            seed = self.provenance.get("seed", "")
            ordered = sorted(self.rows, key=lambda r: (r.horizon_minutes, r.cluster, r.tier))
            for row in ordered:
                writer.writerow(
                    [
                        row.cluster,
                        row.tier,
                        row.horizon_minutes,
                        repr(row.mae),
                        repr(row.p99_mb),
                        repr(float(row.storage_bytes)),
                        row.n_series,
                        seed,
                    ]
                )

    @classmethod
    def read_csv(cls, path: str) -> "PerformanceTable":
        table = cls()
        with open(path, newline="") as fh:
            for raw in csv.DictReader(fh):
                table.add(
                    PerformanceRow(
                        cluster=int(raw["cluster"]),
                        tier=raw["tier"],
                        horizon_minutes=int(raw["horizon_minutes"]),
                        mae=float(raw["mae"]),
                        p99_mb=float(raw["p99_mb"]),
                        storage_bytes=float(raw["storage_bytes"]),
                        n_series=int(raw["n_series"]),
                    )
                )
                if raw.get("seed"):
                    table.provenance.setdefault("seed", raw["seed"])
        return table


@dataclass(frozen=True)
class ModelEntry:
    """One trained model to evaluate: global when ``cluster`` is None."""

    tier: str
    horizon_minutes: int
    model: ForecastModel
    cluster: int | None = None


def evaluate_on_test(model: ForecastModel, dataset: WindowedDataset) -> tuple[np.ndarray, float]:
    """(per-window MAE vector, p99 in MB) over the dataset's test split."""
    idx = dataset.indices("test")
    if idx.size == 0:
        raise EvalError("test split is empty")
    inputs = dataset.inputs[idx]
    targets = dataset.targets[idx]
    ids = dataset.series_ids[idx]
    predictions = forward_batch(model, inputs)
    window_maes = np.mean(np.abs(predictions - targets), axis=1)

    target_bytes = np.empty_like(targets)
    prediction_bytes = np.empty_like(predictions)
    for series_id in np.unique(ids):
        rows = ids == series_id
        normalizer = dataset.normalizers[str(series_id)]
        target_bytes[rows] = normalizer.denormalize_load(targets[rows])
        prediction_bytes[rows] = normalizer.denormalize_load(predictions[rows])
    p99 = p99_abs_error(target_bytes, prediction_bytes, denormalize=None)
    return window_maes, p99


def build_performance_table(
    entries: Sequence[ModelEntry],
    cluster_datasets: Mapping[int, Mapping[int, WindowedDataset]],
    nominal_sizes: Mapping[str, float],
    provenance: dict | None = None,
) -> PerformanceTable:
    """Run inference per (cluster, tier, horizon) and assemble the table.

    Global entries are evaluated on every cluster; cluster entries only on
    their own. Every (cluster, horizon) must be covered by a GM entry.
    """
    table = PerformanceTable(provenance=dict(provenance or {}))
    clusters = sorted(cluster_datasets)
    horizons = sorted({hm for by_h in cluster_datasets.values() for hm in by_h})

    for horizon_minutes in horizons:
        if not any(e.tier == "GM" and e.cluster is None and e.horizon_minutes == horizon_minutes
                   for e in entries):
            raise EvalError(f"missing GM model for horizon {horizon_minutes} min")

    for entry in entries:
        targets = clusters if entry.cluster is None else [entry.cluster]
        for cluster in targets:
            dataset = cluster_datasets.get(cluster, {}).get(entry.horizon_minutes)
            if dataset is None:
                raise EvalError(f"no dataset for cluster {cluster} at horizon {entry.horizon_minutes} min")
            window_maes, p99 = evaluate_on_test(entry.model, dataset)
            table.add(
                PerformanceRow(
                    cluster=cluster,
                    tier=entry.tier,
                    horizon_minutes=entry.horizon_minutes,
                    mae=float(window_maes.mean()),
                    p99_mb=p99,
                    storage_bytes=float(nominal_sizes[entry.tier]),
                    n_series=dataset.series_count("test"),
                )
            )
    return table
