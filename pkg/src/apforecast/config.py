"""Pipeline configuration: TOML document with embedded defaults.

Every knob has a default, so a minimal (even empty) config runs the
synthetic demo end to end. Validation collects all violations instead of
stopping at the first one.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .ingest import DEFAULT_ORIGIN, REQUIRED_FIELDS


class ConfigError(ValueError):
    """One or more invalid configuration values."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in problems))
        self.problems = problems


@dataclass
class ArchetypeConfig:
    name: str
    count: int
    base_level: float
    diurnal_amplitude: float
    weekend_contrast: float
    noise_scale: float
    peak_hour: float = 13.0
    user_scale: float = 5.0


def _default_archetypes() -> list[ArchetypeConfig]:
    return [
        ArchetypeConfig("busy", 8, 6.0e6, 0.8, 0.5, 0.25, peak_hour=14.0, user_scale=12.0),
        ArchetypeConfig("office", 8, 8.0e5, 0.5, 0.7, 0.10, peak_hour=11.0, user_scale=6.0),
        ArchetypeConfig("quiet", 8, 4.0e4, 0.2, 0.0, 0.05, peak_hour=20.0, user_scale=2.0),
    ]


@dataclass
class SyntheticSection:
    days: int = 7
    origin: float = float(DEFAULT_ORIGIN)
    archetypes: list[ArchetypeConfig] = field(default_factory=_default_archetypes)


@dataclass
class InputSection:
    csv: str = ""
    columns: dict[str, str] = field(default_factory=lambda: {f: f for f in REQUIRED_FIELDS})
    span: list[float] = field(default_factory=list)  # [t0, t1); empty = derive from records


@dataclass
class FeaturesSection:
    transform: str = "cube_root"
    timezone_offset_hours: float = 0.0
    morning: list[int] = field(default_factory=lambda: [6, 12])
    afternoon: list[int] = field(default_factory=lambda: [12, 18])
    weekend_days: list[int] = field(default_factory=lambda: [5, 6])


@dataclass
class PcaSection:
    variance_target: float = 0.90


@dataclass
class ClusterSection:
    k_min: int = 2
    k_max: int = 10
    restarts: int = 10
    max_iter: int = 300
    tol: float = 1e-6


@dataclass
class TrainSection:
    horizons_minutes: list[int] = field(default_factory=lambda: [10])
    lookback: int = 36
    stride: int = 2
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 3
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    input_channels: int = 1
    tiers: list[str] = field(default_factory=lambda: ["GM", "Lk"])
    lkv2_clusters: list[int] = field(default_factory=list)


@dataclass
class DeploySection:
    absolute_floor: float = 0.001
    relative_threshold: float = 0.20
    escalation_threshold: float = 0.004
    memory_budget_mb: float = 0.0  # 0 = unlimited
    nominal_sizes_mb: dict[str, float] = field(default_factory=lambda: {"GM": 1.0, "Lk": 1.0, "Lkv2": 3.5})
    plan_horizon_minutes: int = 10


@dataclass
class PipelineConfig:
    seed: int = 7
    out_dir: str = "runs/demo"
    step_seconds: float = 600.0
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)
    input: InputSection = field(default_factory=InputSection)
    features: FeaturesSection = field(default_factory=FeaturesSection)
    pca: PcaSection = field(default_factory=PcaSection)
    cluster: ClusterSection = field(default_factory=ClusterSection)
    train: TrainSection = field(default_factory=TrainSection)
    deploy: DeploySection = field(default_factory=DeploySection)

    def uses_synthetic(self) -> bool:
        return not self.input.csv

    def horizon_steps(self, horizon_minutes: int) -> int:
        return int(round(horizon_minutes * 60 / self.step_seconds))

    def to_dict(self) -> dict:
        def unpack(obj: Any) -> Any:
            if hasattr(obj, "__dataclass_fields__"):
                return {f.name: unpack(getattr(obj, f.name)) for f in fields(obj)}
            if isinstance(obj, list):
                return [unpack(v) for v in obj]
            if isinstance(obj, dict):
                return {k: unpack(v) for k, v in obj.items()}
            return obj

        return unpack(self)


def _coerce_section(cls, payload: Mapping[str, Any], problems: list[str], context: str):
    kwargs = {}
    known = {f.name for f in fields(cls)}
    for key, value in payload.items():
        if key not in known:
            problems.append(f"{context}: unknown key {key!r}")
            continue
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        problems.append(f"{context}: {exc}")
        return cls()


def parse_config(payload: Mapping[str, Any]) -> PipelineConfig:
    """Build a validated PipelineConfig from a parsed TOML mapping."""
    problems: list[str] = []
    config = PipelineConfig()

    scalars = {"seed": int, "out_dir": str, "step_seconds": float}
    for key, cast in scalars.items():
        if key in payload:
            try:
                setattr(config, key, cast(payload[key]))
            except (TypeError, ValueError):
                problems.append(f"{key}: expected {cast.__name__}, got {payload[key]!r}")

    sections = {
        "synthetic": (SyntheticSection, "synthetic"),
        "input": (InputSection, "input"),
        "features": (FeaturesSection, "features"),
        "pca": (PcaSection, "pca"),
        "cluster": (ClusterSection, "cluster"),
        "train": (TrainSection, "train"),
        "deploy": (DeploySection, "deploy"),
    }
    for name, (cls, context) in sections.items():
        if name not in payload:
            continue
        section_payload = dict(payload[name])
        if name == "synthetic" and "archetypes" in section_payload:
            raw = section_payload.pop("archetypes")
            archetypes = []
            for i, item in enumerate(raw):
                arch = _coerce_section(ArchetypeConfig, item, problems, f"synthetic.archetypes[{i}]")
                archetypes.append(arch)
            section = _coerce_section(cls, section_payload, problems, context)
            section.archetypes = archetypes
        else:
            section = _coerce_section(cls, section_payload, problems, context)
        setattr(config, name, section)

    unknown = set(payload) - set(scalars) - set(sections)
    for key in sorted(unknown):
        problems.append(f"unknown top-level key {key!r}")

    problems.extend(validate(config))
    if problems:
        raise ConfigError(problems)
    return config


def validate(config: PipelineConfig) -> list[str]:
    problems: list[str] = []
    if config.step_seconds <= 0:
        problems.append("step_seconds must be positive")
    if config.synthetic.days <= 0:
        problems.append("synthetic.days must be positive")
    for arch in config.synthetic.archetypes:
        if arch.count <= 0:
            problems.append(f"synthetic archetype {arch.name!r}: count must be positive")
        if arch.base_level < 0 or arch.noise_scale < 0:
            problems.append(f"synthetic archetype {arch.name!r}: base_level and noise_scale must be >= 0")
    if config.input.csv:
        missing = [f for f in REQUIRED_FIELDS if f not in config.input.columns]
        if missing:
            problems.append(f"input.columns must map {missing}")
        if config.input.span and len(config.input.span) != 2:
            problems.append("input.span must be [t0, t1]")
    if config.features.transform not in ("cube_root", "log1p"):
        problems.append(f"features.transform must be cube_root or log1p, got {config.features.transform!r}")
    if not (0.0 < config.pca.variance_target <= 1.0):
        problems.append("pca.variance_target must lie in (0, 1]")
    if not (2 <= config.cluster.k_min <= config.cluster.k_max):
        problems.append("cluster: need 2 <= k_min <= k_max")
    if config.cluster.restarts < 1 or config.cluster.max_iter < 1:
        problems.append("cluster: restarts and max_iter must be >= 1")
    if config.train.lookback < 1 or config.train.stride < 1:
        problems.append("train: lookback and stride must be >= 1")
    if config.train.batch_size < 1 or config.train.max_epochs < 1:
        problems.append("train: batch_size and max_epochs must be >= 1")
    if config.train.patience < 0:
        problems.append("train: patience must be >= 0")
    if not (0 < config.train.train_fraction < 1 and 0 < config.train.val_fraction < 1):
        problems.append("train: fractions must lie in (0, 1)")
    if config.train.train_fraction + config.train.val_fraction >= 1:
        problems.append("train: train_fraction + val_fraction must be < 1")
    if config.train.input_channels not in (1, 2):
        problems.append("train: input_channels must be 1 or 2")
    for tier in config.train.tiers:
        if tier not in ("GM", "Lk"):
            problems.append(f"train.tiers may contain GM and Lk only, got {tier!r}")
    if "GM" not in config.train.tiers:
        problems.append("train.tiers must include GM")
    if not config.train.horizons_minutes:
        problems.append("train.horizons_minutes must not be empty")
    for hm in config.train.horizons_minutes:
        if hm <= 0:
            problems.append(f"train horizon {hm} must be positive")
        elif abs(hm * 60 / config.step_seconds - round(hm * 60 / config.step_seconds)) > 1e-9:
            problems.append(f"horizon {hm} min is not a whole number of {config.step_seconds}-second steps")
        elif round(hm * 60 / config.step_seconds) < 1:
            problems.append(f"horizon {hm} min is shorter than one step")
    if config.deploy.plan_horizon_minutes not in config.train.horizons_minutes:
        problems.append(
            f"deploy.plan_horizon_minutes {config.deploy.plan_horizon_minutes} is not among "
            f"train.horizons_minutes {config.train.horizons_minutes}"
        )
    if min(
        config.deploy.absolute_floor,
        config.deploy.relative_threshold,
        config.deploy.escalation_threshold,
    ) <= 0:
        problems.append("deploy thresholds must be positive")
    if config.deploy.memory_budget_mb < 0:
        problems.append("deploy.memory_budget_mb must be >= 0 (0 = unlimited)")
    for tier in ("GM", "Lk", "Lkv2"):
        if tier not in config.deploy.nominal_sizes_mb:
            problems.append(f"deploy.nominal_sizes_mb must include {tier}")
        elif config.deploy.nominal_sizes_mb[tier] <= 0:
            problems.append(f"deploy.nominal_sizes_mb[{tier}] must be positive")
    return problems


def load_config(path: str | Path | None) -> PipelineConfig:
    """Parse a TOML config file; ``None`` yields the embedded defaults."""
    if path is None:
        return parse_config({})
    raw = Path(path).read_bytes()
    try:
        payload = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"TOML parse error: {exc}"]) from exc
    return parse_config(payload)
