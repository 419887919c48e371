"""Experiment configuration and file-to-file stage orchestration.

Every stage reads its inputs from serialized artifacts and writes serialized
outputs, and run_experiment chains the very same stage functions over the
same files the standalone CLI subcommands use. That makes the end-to-end run
byte-identical to running the stages by hand with the same seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .audit import AuditConfig, AuditContext, AuditRecord, artifact_dominance, audit_feature
from .blackbox import ForestModel, ForestParams, PredictionOracle, load_external_predictions
from .composition import CompositionSpec, IterationPlan, iteration_split
from .distill import DistillConfig, FeatureSet, _top10_jaccard, distill_iteration, train_iteration
from .errors import ConfigError, IoFailure
from .featurize import (
    FeatureCatalog,
    FeatureMatrix,
    FeaturizeParams,
    build_catalog,
    build_matrix,
    read_dense_csv,
    write_dense_csv,
    write_triplets_csv,
)
from .forge import CorpusSpec, build_corpus
from .manifest import CorpusManifest
from .report import TrustReport, emit_heatmaps, emit_report
from .util import dump_json, load_json

ACCURACY_GATE = 0.90


@dataclass
class ExperimentConfig:
    seed: int
    corpus_forge_spec: Path | None
    corpus_dir: Path | None
    corpus_manifest: Path | None
    composition: CompositionSpec
    featurize: FeaturizeParams
    forest: ForestParams | None
    predictions_csv: Path | None
    distill: DistillConfig
    audit: AuditConfig
    extra_audit_features: tuple[str, ...]
    output_dir: Path

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        raw = load_json(path)
        if not isinstance(raw, dict):
            raise ConfigError("experiment config must be a JSON object")
        base = path.parent

        def resolve(p: str | None) -> Path | None:
            return (base / p) if p is not None else None

        corpus = raw.get("corpus", {})
        forge_spec = resolve(corpus.get("forge_spec"))
        corpus_dir = resolve(corpus.get("dir"))
        corpus_manifest = resolve(corpus.get("manifest"))
        if (forge_spec is None) == (corpus_dir is None):
            raise ConfigError("corpus needs exactly one of forge_spec or dir")
        if corpus_dir is not None and corpus_manifest is None:
            corpus_manifest = corpus_dir / "manifest.json"

        blackbox = raw.get("blackbox", {})
        predictions_csv = resolve(blackbox.get("predictions_csv"))
        forest = None if predictions_csv is not None else ForestParams.from_dict(blackbox)

        try:
            comp_raw = dict(raw["composition"])
            comp_raw.setdefault("seed", int(raw["seed"]))
            cfg = cls(
                seed=int(raw["seed"]),
                corpus_forge_spec=forge_spec,
                corpus_dir=corpus_dir,
                corpus_manifest=corpus_manifest,
                composition=CompositionSpec.from_dict(comp_raw),
                featurize=FeaturizeParams.from_dict(raw.get("featurize", {})),
                forest=forest,
                predictions_csv=predictions_csv,
                distill=DistillConfig.from_dict(raw.get("distill", {})),
                audit=AuditConfig.from_dict(raw.get("audit", {})),
                extra_audit_features=tuple(raw.get("audit", {}).get("extra_features", ())),
                output_dir=resolve(raw.get("output_dir", "out")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc
        return cfg

    def to_dict(self) -> dict:
        """Resolved configuration as embedded in the report."""
        blackbox: dict = {}
        if self.predictions_csv is not None:
            blackbox["predictions_csv"] = str(self.predictions_csv)
        else:
            blackbox = self.forest.to_dict()
        return {
            "seed": self.seed,
            "corpus": {
                "forge_spec": str(self.corpus_forge_spec) if self.corpus_forge_spec else None,
                "dir": str(self.corpus_dir) if self.corpus_dir else None,
            },
            "composition": self.composition.to_dict(),
            "featurize": self.featurize.to_dict(),
            "blackbox": blackbox,
            "distill": self.distill.to_dict(),
            "audit": {**self.audit.to_dict(), "extra_features": list(self.extra_audit_features)},
            "output_dir": str(self.output_dir),
        }


# --- standalone stages (file to file) ---

def stage_forge(spec_path: Path, out_dir: Path, workers: int = 1) -> CorpusManifest:
    raw = load_json(spec_path)
    if not isinstance(raw, dict):
        raise ConfigError(f"corpus spec {spec_path} must be a JSON object")
    spec = CorpusSpec.from_dict(raw)
    return build_corpus(spec, out_dir, workers=workers)


def stage_extract(
    manifest_path: Path, out_dir: Path, params: FeaturizeParams, workers: int = 1
) -> tuple[FeatureCatalog, FeatureMatrix]:
    manifest = CorpusManifest.load(manifest_path)
    catalog = build_catalog(manifest, params, workers=workers)
    matrix = build_matrix(manifest, catalog, workers=workers)
    out_dir.mkdir(parents=True, exist_ok=True)
    catalog.save(out_dir / "catalog.json")
    write_dense_csv(matrix, out_dir / "features.csv")
    write_triplets_csv(matrix, out_dir / "features_triplets.csv")
    return catalog, matrix


def stage_compose(manifest_path: Path, composition: CompositionSpec, out_path: Path) -> IterationPlan:
    manifest = CorpusManifest.load(manifest_path)
    plan = iteration_split(manifest, composition)
    dump_json(plan.to_dict(), out_path)
    return plan


def _load_features(features_dir: Path) -> tuple[FeatureCatalog, FeatureMatrix]:
    catalog = FeatureCatalog.load(features_dir / "catalog.json")
    matrix = read_dense_csv(features_dir / "features.csv")
    return catalog, matrix


def _oracle_for(model_path: Path | None, predictions_csv: Path | None) -> PredictionOracle:
    if (model_path is None) == (predictions_csv is None):
        raise ConfigError("need exactly one of a model file or a predictions table")
    if model_path is not None:
        return PredictionOracle(forest=ForestModel.from_dict(load_json(model_path)))
    return PredictionOracle(table=load_external_predictions(predictions_csv))


def stage_train(
    manifest_path: Path,
    features_dir: Path,
    plan_path: Path,
    iteration: int,
    master_seed: int,
    forest_params: ForestParams | None,
    predictions_csv: Path | None,
    out_dir: Path,
    accuracy_gate: float = ACCURACY_GATE,
) -> dict[str, float]:
    """Train (or adapt) the black-box for one iteration; writes
    model_<t>.json (reference forest only) and metrics_<t>.json."""
    manifest = CorpusManifest.load(manifest_path)
    _, matrix = _load_features(features_dir)
    plan = IterationPlan.from_dict(load_json(plan_path))
    ids = plan.iterations[iteration]
    external = PredictionOracle(table=load_external_predictions(predictions_csv)) if predictions_csv else None
    model, metrics, _ = train_iteration(
        manifest, matrix, ids, iteration, master_seed,
        forest_params or ForestParams(), external_oracle=external, accuracy_gate=accuracy_gate,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    if model is not None:
        dump_json(model.to_dict(), out_dir / f"model_{iteration}.json")
    dump_json(metrics, out_dir / f"metrics_{iteration}.json")
    return metrics


def stage_distill(
    features_dir: Path,
    plan_path: Path,
    iteration: int,
    master_seed: int,
    distill_config: DistillConfig,
    model_path: Path | None,
    predictions_csv: Path | None,
    out_dir: Path,
) -> FeatureSet:
    _, matrix = _load_features(features_dir)
    plan = IterationPlan.from_dict(load_json(plan_path))
    ids = plan.iterations[iteration]
    oracle = _oracle_for(model_path, predictions_csv)
    feature_set = distill_iteration(matrix, ids, iteration, master_seed, distill_config, oracle)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_json(feature_set.to_dict(), out_dir / f"featureset_{iteration}.json")
    return feature_set


def stage_audit(
    manifest_path: Path,
    features_dir: Path,
    features: list[str],
    config: AuditConfig,
    out_path: Path,
) -> list[AuditRecord]:
    """Audit an explicit feature list; writes one JSON record per line."""
    manifest = CorpusManifest.load(manifest_path)
    catalog, matrix = _load_features(features_dir)
    ctx = AuditContext(manifest, matrix, catalog)
    records = [audit_feature(name, ctx, config) for name in features]
    out_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {out_path}: {exc}") from exc
    return records


def load_audit_records(path: Path) -> list[dict]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


@dataclass
class ExperimentResult:
    report: TrustReport
    paths: dict[str, Path]


def stage_report(config: ExperimentConfig, experiment_dir: Path) -> ExperimentResult:
    """Assemble and emit the trust report from the stage artifacts already
    on disk (plan.json, featureset_<t>.json, metrics_<t>.json, audit.jsonl)."""
    plan = IterationPlan.from_dict(load_json(experiment_dir / "plan.json"))
    feature_sets: list[FeatureSet] = []
    metrics: list[dict[str, float]] = []
    for t in range(config.composition.iterations):
        feature_sets.append(FeatureSet.from_dict(load_json(experiment_dir / f"featureset_{t}.json")))
        metrics.append({k: float(v) for k, v in load_json(experiment_dir / f"metrics_{t}.json").items()})
    records = [AuditRecord.from_dict(raw) for raw in load_audit_records(experiment_dir / "audit.jsonl")]

    verdicts = {rec.feature: rec.verdict for rec in records}
    report = TrustReport(
        config=config.to_dict(),
        composition=config.composition.to_dict(),
        plan=plan,
        feature_sets=feature_sets,
        metrics=metrics,
        audit_records=records,
        stability_top10_jaccard=_top10_jaccard(feature_sets),
        artifact_dominance=artifact_dominance(feature_sets, verdicts),
        master_seed=config.seed,
    )
    paths = emit_report(report, experiment_dir)
    paths.update(emit_heatmaps(report, experiment_dir))
    return ExperimentResult(report=report, paths=paths)


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """End to end: corpus, features, plan, per-iteration train and distill,
    audit of the ranked-feature union, report emission. Every stage hands
    off through the same serialized artifacts the standalone subcommands
    use, so chaining those by hand gives byte-identical output."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)

    if config.corpus_forge_spec is not None:
        corpus_dir = out / "corpus"
        stage_forge(config.corpus_forge_spec, corpus_dir, workers=workers)
        manifest_path = corpus_dir / "manifest.json"
    else:
        if not config.corpus_manifest or not config.corpus_manifest.exists():
            raise IoFailure(f"corpus manifest not found: {config.corpus_manifest}")
        manifest_path = config.corpus_manifest

    features_dir = out / "features"
    stage_extract(manifest_path, features_dir, config.featurize, workers=workers)

    plan_path = out / "plan.json"
    stage_compose(manifest_path, config.composition, plan_path)

    feature_sets: list[FeatureSet] = []
    for t in range(config.composition.iterations):
        stage_train(
            manifest_path, features_dir, plan_path, t, config.seed,
            config.forest, config.predictions_csv, out,
        )
        model_path = out / f"model_{t}.json" if config.predictions_csv is None else None
        fs = stage_distill(
            features_dir, plan_path, t, config.seed, config.distill,
            model_path, config.predictions_csv, out,
        )
        feature_sets.append(fs)

    ranked_union = sorted({name for fs in feature_sets for name in fs.names()})
    audit_targets = list(dict.fromkeys(ranked_union + list(config.extra_audit_features)))
    stage_audit(
        manifest_path, features_dir, audit_targets, config.audit, out / "audit.jsonl"
    )
    return stage_report(config, out)
