"""Association-record parsing and per-AP load series derivation.

A raw dataset row is one client<->AP session with byte totals. The load of
each AP is rebuilt by spreading every session's bytes equally over the
windows of size ``step_w`` covered by its association interval, which keeps
total bytes conserved per span while producing aligned, fixed-length series
for every AP.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Sequence

import numpy as np

from .seeding import rng_for

REQUIRED_FIELDS = ("ap_id", "client_id", "start_time", "end_time", "bytes_up", "bytes_down")

DEFAULT_SCHEMA: dict[str, str] = {name: name for name in REQUIRED_FIELDS}


class SchemaError(ValueError):
    """A required column is missing from the input header."""


class IngestError(ValueError):
    """Invalid derivation or generation arguments."""


@dataclass(frozen=True)
class AssociationRecord:
    """One client<->AP session with uplink/downlink byte totals."""

    ap_id: str
    client_id: str
    start_time: float
    end_time: float
    bytes_up: int
    bytes_down: int

    def __post_init__(self) -> None:
        if self.end_time < self.start_time:
            raise ValueError(f"end_time {self.end_time} precedes start_time {self.start_time}")
        if self.bytes_up < 0 or self.bytes_down < 0:
            raise ValueError("byte counts must be non-negative")

    def total_bytes(self, channel: str = "total") -> int:
        if channel == "total":
            return self.bytes_up + self.bytes_down
        if channel == "up":
            return self.bytes_up
        if channel == "down":
            return self.bytes_down
        raise ValueError(f"unknown channel {channel!r}")


@dataclass
class LoadSeries:
    """Per-AP time series of window load (bytes) and distinct active users."""

    ap_id: str
    origin: float
    step_w: float
    load: np.ndarray
    active_users: np.ndarray

    def __post_init__(self) -> None:
        self.load = np.asarray(self.load, dtype=float)
        self.active_users = np.asarray(self.active_users, dtype=np.int64)
        if self.load.shape != self.active_users.shape or self.load.ndim != 1:
            raise ValueError("load and active_users must be 1-D and equally long")
        if self.load.size < 1:
            raise ValueError("series must contain at least one window")
        if np.any(self.load < 0):
            raise ValueError("load values must be non-negative")
        if self.step_w <= 0:
            raise ValueError("step_w must be positive")

    def __len__(self) -> int:
        return int(self.load.size)

    def window_starts(self) -> np.ndarray:
        """Epoch-second start time of each window."""
        return self.origin + self.step_w * np.arange(len(self), dtype=float)


@dataclass(frozen=True)
class IngestSummary:
    ap_count: int
    record_count: int
    span_days: int
    window_count: int
    step_w: float

    def to_dict(self) -> dict:
        return {
            "ap_count": self.ap_count,
            "record_count": self.record_count,
            "span_days": self.span_days,
            "window_count": self.window_count,
            "step_w": self.step_w,
        }


@dataclass
class ParseResult:
    records: list[AssociationRecord]
    error_count: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)

    MAX_REPORTED = 50

    def note_error(self, line_no: int, reason: str) -> None:
        self.error_count += 1
        if len(self.errors) < self.MAX_REPORTED:
            self.errors.append((line_no, reason))


def _parse_timestamp(raw: str) -> float:
    """Epoch seconds from either a numeric string or an ISO-8601 timestamp."""
    text = raw.strip()
    try:
        return float(text)
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    moment = datetime.fromisoformat(text)
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment.timestamp()


def parse_records(
    source: io.TextIOBase | Iterable[str],
    schema: Mapping[str, str] | None = None,
) -> ParseResult:
    """Parse association records from header-first CSV.

    ``schema`` maps the canonical field names to the column names used by the
    input file. Malformed rows are skipped and counted; a missing required
    column raises :class:`SchemaError`.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    missing_schema = [f for f in REQUIRED_FIELDS if f not in schema]
    if missing_schema:
        raise SchemaError(f"schema does not map required fields: {missing_schema}")

    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        return ParseResult(records=[])
    missing_cols = [schema[f] for f in REQUIRED_FIELDS if schema[f] not in reader.fieldnames]
    if missing_cols:
        raise SchemaError(f"input is missing required columns: {missing_cols}")

    result = ParseResult(records=[])
    for line_no, row in enumerate(reader, start=2):
        try:
            record = AssociationRecord(
                ap_id=row[schema["ap_id"]].strip(),
                client_id=row[schema["client_id"]].strip(),
                start_time=_parse_timestamp(row[schema["start_time"]]),
                end_time=_parse_timestamp(row[schema["end_time"]]),
                bytes_up=int(row[schema["bytes_up"]]),
                bytes_down=int(row[schema["bytes_down"]]),
            )
        except (ValueError, KeyError, AttributeError, TypeError) as exc:
            result.note_error(line_no, str(exc))
            continue
        result.records.append(record)
    return result


def _spread_windows(start: float, duration: float, t0: float, step_w: float, n_windows: int) -> range:
    """Window indices a clipped interval spreads over.

    The spread starts in the window containing ``start`` and covers
    ``max(1, ceil(duration / step_w))`` consecutive windows; a zero-duration
    interval occupies exactly the window containing its start.
    """
    first = int(math.floor((start - t0) / step_w))
    n_steps = max(1, math.ceil(duration / step_w - 1e-12))
    first = min(max(first, 0), n_windows - 1)
    last = min(first + n_steps, n_windows)
    return range(first, last)


def derive_load_series(
    records: Sequence[AssociationRecord],
    step_w: float,
    span: tuple[float, float],
    channel: str = "total",
) -> list[LoadSeries]:
    """Spread each session's bytes equally over the windows of its duration.

    Records straddling the span boundary are clipped with bytes prorated by
    the overlapped fraction; records fully outside the span are ignored.
    Every returned series shares origin ``span[0]``, ``step_w`` and length.
    """
    t0, t1 = span
    if step_w <= 0:
        raise IngestError("step_w must be positive")
    if t1 <= t0:
        raise IngestError("span must be non-empty")
    n_windows = int(math.ceil((t1 - t0) / step_w - 1e-12))

    loads: dict[str, np.ndarray] = {}
    user_hits: dict[str, set[tuple[int, str]]] = {}

    for rec in records:
        full_duration = rec.end_time - rec.start_time
        if full_duration == 0:
            if not (t0 <= rec.start_time < t1):
                continue
            windows = _spread_windows(rec.start_time, 0.0, t0, step_w, n_windows)
            fraction = 1.0
        else:
            start = max(rec.start_time, t0)
            end = min(rec.end_time, t1)
            if end <= start:
                continue
            windows = _spread_windows(start, end - start, t0, step_w, n_windows)
            fraction = (end - start) / full_duration

        if rec.ap_id not in loads:
            loads[rec.ap_id] = np.zeros(n_windows, dtype=float)
            user_hits[rec.ap_id] = set()
        per_window = rec.total_bytes(channel) * fraction / len(windows)
        ap_load = loads[rec.ap_id]
        ap_users = user_hits[rec.ap_id]
        for idx in windows:
            ap_load[idx] += per_window
            ap_users.add((idx, rec.client_id))

    series: list[LoadSeries] = []
    for ap_id in sorted(loads):
        counts = np.zeros(n_windows, dtype=np.int64)
        for idx, _client in user_hits[ap_id]:
            counts[idx] += 1
        series.append(
            LoadSeries(ap_id=ap_id, origin=t0, step_w=step_w, load=loads[ap_id], active_users=counts)
        )
    return series


def summarize(records: Sequence[AssociationRecord], series: Sequence[LoadSeries]) -> IngestSummary:
    """Dataset-shape counters for a derivation run."""
    if not series:
        return IngestSummary(0, len(records), 0, 0, 0.0)
    n = len(series[0])
    step_w = series[0].step_w
    span_days = int(math.ceil(n * step_w / 86400.0 - 1e-12))
    return IngestSummary(
        ap_count=len(series),
        record_count=len(records),
        span_days=span_days,
        window_count=n,
        step_w=step_w,
    )


@dataclass(frozen=True)
class Archetype:
    """Generating profile for one group of synthetic APs."""

    name: str
    count: int
    base_level: float
    diurnal_amplitude: float
    weekend_contrast: float
    noise_scale: float
    peak_hour: float = 13.0
    user_scale: float = 5.0

    def __post_init__(self) -> None:
        if self.count <= 0:
            raise IngestError(f"archetype {self.name!r} must have a positive count")
        if self.base_level < 0 or self.noise_scale < 0:
            raise IngestError(f"archetype {self.name!r} has negative base level or noise scale")


# Epoch 345600 s = Monday 1970-01-05 00:00 UTC; keeps synthetic weeks aligned.
DEFAULT_ORIGIN = 4 * 86400


@dataclass(frozen=True)
class SyntheticConfig:
    archetypes: tuple[Archetype, ...]
    days: int = 14
    step_w: float = 600.0
    origin: float = DEFAULT_ORIGIN

    def __post_init__(self) -> None:
        if not self.archetypes:
            raise IngestError("at least one archetype is required")
        if self.days <= 0 or self.step_w <= 0:
            raise IngestError("days and step_w must be positive")


def generate_synthetic(config: SyntheticConfig, seed: int) -> tuple[list[LoadSeries], dict[str, str]]:
    """Generate archetype-labelled load series with diurnal/weekly structure.

    Deterministic for a fixed ``(config, seed)``: every AP draws from a
    generator keyed by (seed, archetype index, AP index). Returns the series
    plus a ground-truth map ap_id -> archetype name.
    """
    n_windows = int(round(config.days * 86400 / config.step_w))
    t = config.origin + config.step_w * np.arange(n_windows)
    hour = (t % 86400) / 3600.0
    weekday = (np.floor(t / 86400).astype(np.int64) + 3) % 7
    is_weekend = weekday >= 5

    series: list[LoadSeries] = []
    labels: dict[str, str] = {}
    ap_index = 0
    for arch_idx, arch in enumerate(config.archetypes):
        for member in range(arch.count):
            rng = rng_for(seed, "synthetic", arch_idx, member)
            diurnal = 1.0 + arch.diurnal_amplitude * np.cos(2 * np.pi * (hour - arch.peak_hour) / 24.0)
            day_factor = np.where(is_weekend, max(0.0, 1.0 - arch.weekend_contrast), 1.0)
            clean = arch.base_level * diurnal * day_factor
            noise = rng.normal(0.0, arch.noise_scale * max(arch.base_level, 1e-12), n_windows)
            load = np.maximum(clean + noise, 0.0)
            intensity = arch.user_scale * load / max(arch.base_level, 1e-12)
            users = rng.poisson(np.maximum(intensity, 0.0))
            ap_id = f"ap{ap_index:04d}"
            series.append(
                LoadSeries(
                    ap_id=ap_id,
                    origin=float(config.origin),
                    step_w=float(config.step_w),
                    load=load,
                    active_users=users,
                )
            )
            labels[ap_id] = arch.name
            ap_index += 1
    return series, labels


def write_series_csv(series: Sequence[LoadSeries], path: str) -> None:
    """Long-format CSV: one row per (ap, window)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ap_id", "window_index", "load_bytes", "active_users"])
        for s in series:
            for idx in range(len(s)):
                writer.writerow([s.ap_id, idx, repr(float(s.load[idx])), int(s.active_users[idx])])


def read_series_csv(path: str, origin: float, step_w: float) -> list[LoadSeries]:
    """Inverse of :func:`write_series_csv`; origin/step come from the sidecar."""
    loads: dict[str, list[float]] = {}
    users: dict[str, list[int]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            ap = row["ap_id"]
            loads.setdefault(ap, []).append(float(row["load_bytes"]))
            users.setdefault(ap, []).append(int(row["active_users"]))
    return [
        LoadSeries(ap_id=ap, origin=origin, step_w=step_w,
                   load=np.array(loads[ap]), active_users=np.array(users[ap]))
        for ap in sorted(loads)
    ]


def write_summary_json(summary: IngestSummary, origin: float, path: str, extra: dict | None = None) -> None:
    payload = summary.to_dict()
    payload["origin"] = origin
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
