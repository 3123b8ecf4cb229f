"""Stage orchestration: each stage reads upstream artifacts, writes its own.

Artifacts are plain CSV/JSON with deterministic content for a fixed config
and seed; ``manifest.json`` records a content hash per artifact plus the
config echo, so reruns are verifiable byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import cluster as cluster_mod
from . import deploy as deploy_mod
from . import evaluation, features, ingest, pca
from .config import PipelineConfig
from .forecast import (
    ModelSpec,
    TrainConfig,
    load_model,
    save_model,
    train,
    window_series,
)
from .forecast.model import init_model
from .seeding import derive_seed

STAGES = ("ingest", "features", "reduce", "cluster", "train", "evaluate", "plan", "report")


class DependencyError(RuntimeError):
    """An upstream artifact required by the requested stage is missing."""


ARTIFACTS = {
    "load_series": "load_series.csv",
    "ingest_summary": "ingest_summary.json",
    "labels": "archetype_labels.json",
    "features": "features.csv",
    "scaler": "scaler.json",
    "features_meta": "features_meta.json",
    "pca_model": "pca_model.json",
    "reduced": "reduced.csv",
    "clusters": "clusters.json",
    "loss_history": "loss_history.csv",
    "performance_table": "performance_table.csv",
    "plan": "plan.json",
    "cost_summary": "cost_summary.csv",
    "manifest": "manifest.json",
}


def artifact_path(out_dir: str | Path, name: str) -> Path:
    return Path(out_dir) / ARTIFACTS[name]


def _require(out_dir: Path, names: Sequence[str], stage: str) -> None:
    missing = [ARTIFACTS[n] for n in names if not artifact_path(out_dir, n).exists()]
    if missing:
        raise DependencyError(f"stage {stage!r} requires missing artifacts: {', '.join(missing)}")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _update_manifest(out_dir: Path, config: PipelineConfig, written: Sequence[Path]) -> None:
    manifest_path = out_dir / ARTIFACTS["manifest"]
    payload = {"config": config.to_dict(), "artifacts": {}}
    if manifest_path.exists():
        with open(manifest_path) as fh:
            previous = json.load(fh)
        payload["artifacts"].update(previous.get("artifacts", {}))
    for path in written:
        payload["artifacts"][str(path.relative_to(out_dir))] = _sha256(path)
    payload["artifacts"] = dict(sorted(payload["artifacts"].items()))
    with open(manifest_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# data stage (synthetic generation or CSV ingestion)

def stage_ingest(config: PipelineConfig, out_dir: Path) -> list[Path]:
    """Produce load_series.csv + summary (synthetic or parsed CSV per config)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if config.uses_synthetic():
        synth_config = ingest.SyntheticConfig(
            archetypes=tuple(
                ingest.Archetype(
                    name=a.name,
                    count=a.count,
                    base_level=a.base_level,
                    diurnal_amplitude=a.diurnal_amplitude,
                    weekend_contrast=a.weekend_contrast,
                    noise_scale=a.noise_scale,
                    peak_hour=a.peak_hour,
                    user_scale=a.user_scale,
                )
                for a in config.synthetic.archetypes
            ),
            days=config.synthetic.days,
            step_w=config.step_seconds,
            origin=config.synthetic.origin,
        )
        series, labels = ingest.generate_synthetic(synth_config, derive_seed(config.seed, "synthetic"))
        records: list = []
        row_errors = 0
        labels_path = artifact_path(out_dir, "labels")
        _write_json(labels_path, {"labels": labels})
        written.append(labels_path)
    else:
        csv_path = Path(config.input.csv)
        if not csv_path.exists():
            raise DependencyError(f"stage 'ingest' requires input CSV {csv_path}")
        with open(csv_path, newline="") as fh:
            parsed = ingest.parse_records(fh, config.input.columns)
        records = parsed.records
        row_errors = parsed.error_count
        if config.input.span:
            span = (float(config.input.span[0]), float(config.input.span[1]))
        else:
            if not records:
                raise DependencyError("input CSV contained no valid records and no span was configured")
            t0 = min(r.start_time for r in records)
            t1 = max(r.end_time for r in records)
            t0 = math.floor(t0 / config.step_seconds) * config.step_seconds
            t1 = max(t1, t0 + config.step_seconds)
            span = (t0, t1)
        series = ingest.derive_load_series(records, config.step_seconds, span)

    series_path = artifact_path(out_dir, "load_series")
    ingest.write_series_csv(series, str(series_path))
    written.append(series_path)

    summary = ingest.summarize(records, series)
    summary_path = artifact_path(out_dir, "ingest_summary")
    ingest.write_summary_json(
        summary,
        origin=series[0].origin if series else 0.0,
        path=str(summary_path),
        extra={
            "source": "synthetic" if config.uses_synthetic() else config.input.csv,
            "row_errors": row_errors,
        },
    )
    written.append(summary_path)
    _update_manifest(out_dir, config, written)
    return written


def _load_series(out_dir: Path) -> list[ingest.LoadSeries]:
    summary = _read_json(artifact_path(out_dir, "ingest_summary"))
    return ingest.read_series_csv(
        str(artifact_path(out_dir, "load_series")),
        origin=float(summary["origin"]),
        step_w=float(summary["step_w"]),
    )


# ---------------------------------------------------------------------------
# features stage

def stage_features(config: PipelineConfig, out_dir: Path) -> list[Path]:
    _require(out_dir, ["load_series", "ingest_summary"], "features")
    series = _load_series(out_dir)
    calendar = features.CalendarConfig(
        morning=tuple(config.features.morning),
        afternoon=tuple(config.features.afternoon),
        weekend_days=tuple(config.features.weekend_days),
        timezone_offset_hours=config.features.timezone_offset_hours,
    )
    transformed = [features.transform_load(s, config.features.transform) for s in series]
    tertiles = features.compute_tertiles([s.load for s in transformed])
    matrix = features.build_feature_matrix(transformed, calendar, tertiles)
    scaled, scaler = features.scale_features(matrix)

    features_path = artifact_path(out_dir, "features")
    with open(features_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ap_id", *scaled.names])
        for ap_id, row in zip(scaled.ap_ids, scaled.values):
            writer.writerow([ap_id, *[repr(float(v)) for v in row]])

    scaler_path = artifact_path(out_dir, "scaler")
    _write_json(scaler_path, scaler.to_dict())
    meta_path = artifact_path(out_dir, "features_meta")
    _write_json(
        meta_path,
        {
            "transform": config.features.transform,
            "tertiles": {"low": tertiles.low, "high": tertiles.high},
            "feature_names": list(scaled.names),
        },
    )
    written = [features_path, scaler_path, meta_path]
    _update_manifest(out_dir, config, written)
    return written


def _load_feature_matrix(out_dir: Path) -> features.FeatureMatrix:
    path = artifact_path(out_dir, "features")
    ap_ids: list[str] = []
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = tuple(header[1:])
        for row in reader:
            ap_ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return features.FeatureMatrix(ap_ids=ap_ids, values=np.asarray(rows), names=names)


# ---------------------------------------------------------------------------
# reduce stage

def stage_reduce(config: PipelineConfig, out_dir: Path) -> list[Path]:
    _require(out_dir, ["features"], "reduce")
    matrix = _load_feature_matrix(out_dir)
    model = pca.pca_fit(matrix.values, config.pca.variance_target)
    reduced = pca.pca_transform(model, matrix.values)

    model_path = artifact_path(out_dir, "pca_model")
    model.save(str(model_path))
    reduced_path = artifact_path(out_dir, "reduced")
    with open(reduced_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ap_id", *[f"pc{i + 1}" for i in range(model.retained)]])
        for ap_id, row in zip(matrix.ap_ids, reduced):
            writer.writerow([ap_id, *[repr(float(v)) for v in row]])
    written = [model_path, reduced_path]
    _update_manifest(out_dir, config, written)
    return written


def _load_reduced(out_dir: Path) -> tuple[list[str], np.ndarray]:
    path = artifact_path(out_dir, "reduced")
    ap_ids: list[str] = []
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            ap_ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return ap_ids, np.asarray(rows)


# ---------------------------------------------------------------------------
# cluster stage

def stage_cluster(config: PipelineConfig, out_dir: Path) -> list[Path]:
    _require(out_dir, ["reduced"], "cluster")
    ap_ids, points = _load_reduced(out_dir)
    k_max = min(config.cluster.k_max, len(ap_ids) - 1)
    best, sweep = cluster_mod.select_k(
        points,
        (config.cluster.k_min, k_max),
        seed=derive_seed(config.seed, "cluster"),
        restarts=config.cluster.restarts,
        max_iter=config.cluster.max_iter,
        tol=config.cluster.tol,
    )
    payload = {
        "k": best.k,
        "seed": best.seed,
        "iterations": best.iterations,
        "wcss": best.wcss,
        "silhouette": best.silhouette,
        "calinski_harabasz": best.calinski_harabasz,
        "assignments": best.assignments(ap_ids),
        "centroids": best.centroids.tolist(),
        "sweep": [
            {
                "k": row.k,
                "wcss": row.wcss,
                "silhouette": row.silhouette,
                "calinski_harabasz": row.calinski_harabasz,
            }
            for row in sweep
        ],
    }
    clusters_path = artifact_path(out_dir, "clusters")
    _write_json(clusters_path, payload)
    _update_manifest(out_dir, config, [clusters_path])
    return [clusters_path]


def _load_assignments(out_dir: Path) -> dict[str, int]:
    payload = _read_json(artifact_path(out_dir, "clusters"))
    return {ap: int(c) for ap, c in payload["assignments"].items()}


def _cluster_series(out_dir: Path) -> dict[int, list[ingest.LoadSeries]]:
    assignments = _load_assignments(out_dir)
    series = _load_series(out_dir)
    grouped: dict[int, list[ingest.LoadSeries]] = {}
    for s in series:
        grouped.setdefault(assignments[s.ap_id], []).append(s)
    return {k: grouped[k] for k in sorted(grouped)}


# ---------------------------------------------------------------------------
# train stage

def _model_filename(tier: str, horizon_minutes: int, cluster: int | None) -> str:
    if cluster is None:
        return f"{tier}_h{horizon_minutes}.json"
    return f"{tier}_c{cluster}_h{horizon_minutes}.json"


def _train_config(config: PipelineConfig, seed: int) -> TrainConfig:
    t = config.train
    return TrainConfig(
        learning_rate=t.learning_rate,
        batch_size=t.batch_size,
        max_epochs=t.max_epochs,
        patience=t.patience,
        train_fraction=t.train_fraction,
        val_fraction=t.val_fraction,
        seed=seed,
    )


def stage_train(config: PipelineConfig, out_dir: Path) -> list[Path]:
    """Train the global model plus per-cluster tiers for every horizon."""
    _require(out_dir, ["load_series", "ingest_summary", "clusters"], "train")
    series = _load_series(out_dir)
    grouped = _cluster_series(out_dir)
    models_dir = out_dir / "models"
    models_dir.mkdir(exist_ok=True)

    written: list[Path] = []
    history_rows: list[tuple[str, int, float, float]] = []
    for horizon_minutes in config.train.horizons_minutes:
        h_steps = config.horizon_steps(horizon_minutes)
        spec_gm = ModelSpec.for_tier(
            "GM",
            lookback=config.train.lookback,
            horizon=h_steps,
            input_channels=config.train.input_channels,
        )
        gm_seed = derive_seed(config.seed, "train", "GM", horizon_minutes)
        dataset = window_series(
            series,
            lookback=spec_gm.lookback,
            horizon=spec_gm.horizon,
            stride=config.train.stride,
            train_frac=config.train.train_fraction,
            val_frac=config.train.val_fraction,
            input_channels=spec_gm.input_channels,
        )
        gm = init_model(spec_gm, gm_seed)
        gm, history = train(gm, dataset, _train_config(config, gm_seed))
        gm.trained_on = "all"
        name = _model_filename("GM", horizon_minutes, None)
        save_model(gm, str(models_dir / name))
        written.append(models_dir / name)
        history_rows.extend((name, h.epoch, h.train_loss, h.val_mae) for h in history)

        cluster_tiers = [t for t in config.train.tiers if t != "GM"]
        for cluster_index, members in grouped.items():
            tiers = list(cluster_tiers)
            if cluster_index in config.train.lkv2_clusters:
                tiers.append("Lkv2")
            for tier in tiers:
                tier_seed = derive_seed(config.seed, "train", tier, horizon_minutes, cluster_index)
                spec = ModelSpec.for_tier(
                    tier,
                    lookback=config.train.lookback,
                    horizon=h_steps,
                    input_channels=config.train.input_channels,
                )
                tier_dataset = window_series(
                    members,
                    lookback=spec.lookback,
                    horizon=spec.horizon,
                    stride=config.train.stride,
                    train_frac=config.train.train_fraction,
                    val_frac=config.train.val_fraction,
                    input_channels=spec.input_channels,
                )
                model = init_model(spec, tier_seed)
                model, history = train(model, tier_dataset, _train_config(config, tier_seed))
                model.trained_on = cluster_index
                name = _model_filename(tier, horizon_minutes, cluster_index)
                save_model(model, str(models_dir / name))
                written.append(models_dir / name)
                history_rows.extend((name, h.epoch, h.train_loss, h.val_mae) for h in history)

    history_path = artifact_path(out_dir, "loss_history")
    with open(history_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "epoch", "train_loss", "val_mae"])
        for row in history_rows:
            writer.writerow([row[0], row[1], repr(row[2]), repr(row[3])])
    written.append(history_path)
    _update_manifest(out_dir, config, written)
    return written


# ---------------------------------------------------------------------------
# evaluate stage

def _discover_models(models_dir: Path) -> list[tuple[str, int, int | None, Path]]:
    """(tier, horizon_minutes, cluster, path) for every saved model file."""
    found = []
    for path in sorted(models_dir.glob("*.json")):
        stem = path.stem
        parts = stem.split("_")
        tier = parts[0]
        cluster: int | None = None
        horizon_minutes: int | None = None
        for part in parts[1:]:
            if part.startswith("c"):
                cluster = int(part[1:])
            elif part.startswith("h"):
                horizon_minutes = int(part[1:])
        if horizon_minutes is None:
            continue
        found.append((tier, horizon_minutes, cluster, path))
    return found


def stage_evaluate(config: PipelineConfig, out_dir: Path) -> list[Path]:
    _require(out_dir, ["load_series", "ingest_summary", "clusters"], "evaluate")
    models_dir = out_dir / "models"
    if not models_dir.exists():
        raise DependencyError("stage 'evaluate' requires missing artifacts: models/")
    discovered = _discover_models(models_dir)
    if not discovered:
        raise DependencyError("stage 'evaluate' found no model files under models/")

    grouped = _cluster_series(out_dir)
    horizons = sorted({hm for _, hm, _, _ in discovered})
    cluster_datasets: dict[int, dict[int, object]] = {}
    for cluster_index, members in grouped.items():
        cluster_datasets[cluster_index] = {}
        for horizon_minutes in horizons:
            cluster_datasets[cluster_index][horizon_minutes] = window_series(
                members,
                lookback=config.train.lookback,
                horizon=config.horizon_steps(horizon_minutes),
                stride=config.train.stride,
                train_frac=config.train.train_fraction,
                val_frac=config.train.val_fraction,
                input_channels=config.train.input_channels,
            )

    entries = [
        evaluation.ModelEntry(tier=tier, horizon_minutes=hm, cluster=clu, model=load_model(str(path)))
        for tier, hm, clu, path in discovered
    ]
    nominal = {t: mb * evaluation.MB for t, mb in config.deploy.nominal_sizes_mb.items()}
    table = evaluation.build_performance_table(
        entries,
        cluster_datasets,
        nominal_sizes=nominal,
        provenance={"seed": config.seed},
    )
    table_path = artifact_path(out_dir, "performance_table")
    table.write_csv(str(table_path))
    _update_manifest(out_dir, config, [table_path])
    return [table_path]


# ---------------------------------------------------------------------------
# plan stage

def _policy(config: PipelineConfig) -> deploy_mod.DeployPolicy:
    d = config.deploy
    return deploy_mod.DeployPolicy(
        absolute_floor=d.absolute_floor,
        relative_threshold=d.relative_threshold,
        escalation_threshold=d.escalation_threshold,
        memory_budget=None if d.memory_budget_mb == 0 else d.memory_budget_mb * evaluation.MB,
        nominal_sizes={t: mb * evaluation.MB for t, mb in d.nominal_sizes_mb.items()},
    )


def stage_plan(config: PipelineConfig, out_dir: Path) -> list[Path]:
    _require(out_dir, ["performance_table"], "plan")
    table = evaluation.PerformanceTable.read_csv(str(artifact_path(out_dir, "performance_table")))
    policy = _policy(config)
    horizon = config.deploy.plan_horizon_minutes
    plan = deploy_mod.plan_deployment(table, policy, horizon)
    baseline = deploy_mod.plan_global_only(table, policy, horizon)
    ceiling = deploy_mod.plan_all_specialized(table, policy, horizon)

    plan_path = artifact_path(out_dir, "plan")
    payload = plan.to_dict()
    payload["memory_saving_vs_all_specialized"] = deploy_mod.memory_saving(ceiling, plan)
    if len(table.clusters()) == 5:
        payload["published_reference"] = deploy_mod.reference_cost_comparison(plan)
    _write_json(plan_path, payload)

    cost_path = artifact_path(out_dir, "cost_summary")
    deploy_mod.write_cost_summary_csv([baseline, ceiling, plan], str(cost_path))
    written = [plan_path, cost_path]
    _update_manifest(out_dir, config, written)
    return written


# ---------------------------------------------------------------------------
# report stage

def stage_report(config: PipelineConfig, out_dir: Path) -> list[Path]:
    _require(out_dir, ["reduced", "clusters", "performance_table", "plan", "cost_summary"], "report")
    report_dir = out_dir / "report"
    report_dir.mkdir(exist_ok=True)
    written: list[Path] = []

    ap_ids, reduced = _load_reduced(out_dir)
    assignments = _load_assignments(out_dir)
    scatter_path = report_dir / "cluster_scatter.csv"
    with open(scatter_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ap_id", "pc1", "pc2", "cluster"])
        for ap_id, row in zip(ap_ids, reduced):
            pc2 = row[1] if row.size > 1 else 0.0
            writer.writerow([ap_id, repr(float(row[0])), repr(float(pc2)), assignments[ap_id]])
    written.append(scatter_path)

    table = evaluation.PerformanceTable.read_csv(str(artifact_path(out_dir, "performance_table")))
    for horizon_minutes in table.horizons():
        mae_path = report_dir / f"mae_comparison_{horizon_minutes}min.csv"
        with open(mae_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cluster", "tier", "mae", "p99_mb"])
            for row in sorted(
                (r for r in table.rows if r.horizon_minutes == horizon_minutes),
                key=lambda r: (r.cluster, r.tier),
            ):
                writer.writerow([row.cluster, row.tier, repr(row.mae), repr(row.p99_mb)])
        written.append(mae_path)

        imp_path = report_dir / f"improvement_{horizon_minutes}min.csv"
        with open(imp_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cluster", "base_tier", "new_tier", "improvement"])
            for cluster_index in table.clusters():
                gm_row = table.get(cluster_index, "GM", horizon_minutes)
                if gm_row is None or gm_row.mae <= 0:
                    continue
                for tier in table.tiers_for(cluster_index, horizon_minutes):
                    if tier == "GM":
                        continue
                    tier_row = table.get(cluster_index, tier, horizon_minutes)
                    writer.writerow(
                        [
                            cluster_index,
                            "GM",
                            tier,
                            repr(evaluation.improvement(gm_row.mae, tier_row.mae)),
                        ]
                    )
        written.append(imp_path)

    cost_copy = report_dir / "cost_summary.csv"
    cost_copy.write_bytes(artifact_path(out_dir, "cost_summary").read_bytes())
    written.append(cost_copy)
    _update_manifest(out_dir, config, written)
    return written


# ---------------------------------------------------------------------------

STAGE_FUNCTIONS: dict[str, Callable[[PipelineConfig, Path], list[Path]]] = {
    "ingest": stage_ingest,
    "features": stage_features,
    "reduce": stage_reduce,
    "cluster": stage_cluster,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "plan": stage_plan,
    "report": stage_report,
}


def run_stage(stage: str, config: PipelineConfig, out_dir: str | Path | None = None) -> list[Path]:
    """Execute one named stage; idempotent for identical inputs and seeds."""
    if stage not in STAGE_FUNCTIONS:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    target = Path(out_dir) if out_dir is not None else Path(config.out_dir)
    target.mkdir(parents=True, exist_ok=True)
    return STAGE_FUNCTIONS[stage](config, target)


def run_all(config: PipelineConfig, out_dir: str | Path | None = None) -> list[Path]:
    written: list[Path] = []
    for stage in STAGES:
        written.extend(run_stage(stage, config, out_dir))
    return written
