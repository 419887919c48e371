"""Surrogate extraction: repeatedly fit decision-tree students to a
black-box's predictions and keep the highest-fidelity one.

The loop draws N seeded samples of the dataset, fits S students per sample
(the first on the sample itself, the rest on bootstrap resamples of it),
scores each on the unsampled remainder, and selects the final student by
highest fidelity, then fewest nodes, then lowest sample index. The selected
student's nonzero Gini importances, normalized to sum 1, form the
iteration's ranked feature set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blackbox import (
    LABEL_TO_INT,
    ForestModel,
    ForestParams,
    PredictionOracle,
    evaluate,
    train_forest,
)
from .cart import DecisionTree, fit_cart, gini_importance  # noqa: F401  (re-exported API)
from .composition import CompositionSpec, IterationPlan, iteration_split, split_train_val_test
from .errors import ConfigError, DegenerateSampleError, EmptyHoldoutError, GateFailedError
from .featurize import FeatureMatrix
from .manifest import CorpusManifest
from .util import derive_seed

IMPORTANCE_EPS = 1e-12  # floating-point floor for "non-zero" importance
ACCURACY_GATE = 0.90


@dataclass(frozen=True)
class DistillConfig:
    iterations: int = 20       # N: outer sample draws
    students: int = 10         # S: students per draw
    sample_fraction: float = 0.1
    max_depth: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.iterations < 1 or self.students < 1:
            raise ConfigError("iterations and students must be >= 1")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ConfigError("sample_fraction must be in (0, 1]")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "students": self.students,
            "sample_fraction": self.sample_fraction,
            "max_depth": self.max_depth,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "DistillConfig":
        cfg = cls(
            iterations=int(raw.get("iterations", 20)),
            students=int(raw.get("students", 10)),
            sample_fraction=float(raw.get("sample_fraction", 0.1)),
            max_depth=int(raw.get("max_depth", 8)),
            seed=int(raw.get("seed", 0)),
        )
        cfg.validate()
        return cfg


@dataclass
class FeatureSet:
    iteration: int
    features: list[tuple[str, float]]  # descending importance, all > 0
    fidelity: float
    nodes: int

    def names(self, top: int | None = None) -> list[str]:
        names = [name for name, _ in self.features]
        return names[:top] if top else names

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "fidelity": self.fidelity,
            "nodes": self.nodes,
            "features": [{"name": n, "importance": v} for n, v in self.features],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "FeatureSet":
        return cls(
            iteration=int(raw["iteration"]),
            features=[(r["name"], float(r["importance"])) for r in raw["features"]],
            fidelity=float(raw["fidelity"]),
            nodes=int(raw["nodes"]),
        )


def fidelity(tree: DecisionTree, oracle_labels: np.ndarray, X_holdout: np.ndarray) -> float:
    """Fraction of the holdout where the student agrees with the black-box."""
    if len(X_holdout) == 0:
        raise EmptyHoldoutError("fidelity needs a nonempty holdout")
    if len(oracle_labels) != len(X_holdout):
        raise ConfigError("oracle labels and holdout rows disagree")
    return float(np.mean(tree.predict(X_holdout) == oracle_labels))


def trustee_extract(
    oracle: PredictionOracle,
    matrix: FeatureMatrix,
    config: DistillConfig,
    iteration_index: int = 0,
) -> FeatureSet:
    """Run the N x S student loop against a black-box over a featurized
    dataset and emit the selected student's ranked nonzero importances."""
    config.validate()
    n = len(matrix.ids)
    if n == 0:
        raise DegenerateSampleError("cannot distill an empty dataset")
    y_oracle = oracle.labels(matrix.X, matrix.ids)

    best: tuple[float, int, int, DecisionTree] | None = None  # (fidelity, nodes, draw, tree)
    k = max(1, round(config.sample_fraction * n))
    for draw in range(config.iterations):
        rng = np.random.default_rng(derive_seed(config.seed, "draw", iteration_index, draw))
        sample_idx = rng.choice(n, size=min(k, n), replace=False)
        holdout_mask = np.ones(n, dtype=bool)
        holdout_mask[sample_idx] = False
        X_sample, y_sample = matrix.X[sample_idx], y_oracle[sample_idx]
        # With s = 1 there is no remainder; fall back to in-sample agreement.
        X_hold = matrix.X[holdout_mask] if holdout_mask.any() else X_sample
        y_hold = y_oracle[holdout_mask] if holdout_mask.any() else y_sample

        draw_best: tuple[float, int, int, DecisionTree] | None = None
        for j in range(config.students):
            if j == 0:
                Xs, ys = X_sample, y_sample
            else:
                boot = np.random.default_rng(
                    derive_seed(config.seed, "boot", iteration_index, draw, j)
                ).integers(0, len(X_sample), size=len(X_sample))
                Xs, ys = X_sample[boot], y_sample[boot]
            student = fit_cart(Xs, ys, max_depth=config.max_depth)
            fid = fidelity(student, y_hold, X_hold)
            key = (fid, -student.node_count(), -j)
            if draw_best is None or key > (draw_best[0], -draw_best[1], -draw_best[2]):
                draw_best = (fid, student.node_count(), j, student)
        fid, nodes, _, student = draw_best
        key = (fid, -nodes, -draw)
        if best is None or key > (best[0], -best[1], -best[2]):
            best = (fid, nodes, draw, student)

    fid, nodes, _, student = best
    importances = gini_importance(student)
    named = [
        (matrix.names[f], v) for f, v in importances.items() if v > IMPORTANCE_EPS
    ]
    total = sum(v for _, v in named)
    if total > 0:
        named = [(name, v / total) for name, v in named]
    named.sort(key=lambda item: (-item[1], item[0]))
    return FeatureSet(iteration=iteration_index, features=named, fidelity=fid, nodes=nodes)


@dataclass
class IterationResult:
    index: int
    metrics: dict[str, float]  # val/test accuracy and f1
    feature_set: FeatureSet
    model: ForestModel | None = None


@dataclass
class PipelineResult:
    plan: IterationPlan
    iterations: list[IterationResult]
    stability_top10_jaccard: float | None

    @property
    def feature_sets(self) -> list[FeatureSet]:
        return [it.feature_set for it in self.iterations]


def _top10_jaccard(sets: list[FeatureSet]) -> float | None:
    """Mean pairwise Jaccard of the top-10 feature names; None for I = 1."""
    if len(sets) < 2:
        return None
    tops = [set(s.names(10)) for s in sets]
    pairs = []
    for i in range(len(tops)):
        for j in range(i + 1, len(tops)):
            union = tops[i] | tops[j]
            pairs.append(len(tops[i] & tops[j]) / len(union) if union else 1.0)
    return float(sum(pairs) / len(pairs))


def train_iteration(
    manifest: CorpusManifest,
    matrix: FeatureMatrix,
    ids: list[str],
    iteration: int,
    master_seed: int,
    forest_params: ForestParams,
    external_oracle: PredictionOracle | None = None,
    accuracy_gate: float = ACCURACY_GATE,
) -> tuple[ForestModel | None, dict[str, float], PredictionOracle]:
    """Split one iteration's ids 64:16:20 (stratified by category), train the
    reference forest on the train split unless an external oracle stands in,
    and enforce the held-out accuracy gate on the test split."""
    labels = manifest.labels()
    categories = manifest.categories()
    split_seed = derive_seed(master_seed, "split", iteration)
    train_ids, val_ids, test_ids = split_train_val_test(ids, split_seed, categories)
    sub = matrix.subset(ids)
    y = {sid: LABEL_TO_INT[labels[sid]] for sid in ids}

    def rows(which: list[str]):
        m = sub.subset(which)
        return m.X, np.array([y[s] for s in which], dtype=np.int64), which

    if external_oracle is not None:
        oracle = external_oracle
        model = None
    else:
        X_train, y_train, _ = rows(train_ids)
        model = train_forest(
            X_train, y_train, forest_params, derive_seed(master_seed, "forest", iteration)
        )
        oracle = PredictionOracle(forest=model)

    metrics: dict[str, float] = {}
    for split_name, split_ids in (("val", val_ids), ("test", test_ids)):
        Xs, ys, sids = rows(split_ids)
        scores = evaluate(oracle, Xs, ys, sids)
        metrics[f"{split_name}_accuracy"] = scores["accuracy"]
        metrics[f"{split_name}_f1"] = scores["f1"]
    if model is not None:
        model.metrics = dict(metrics)
    if metrics["test_accuracy"] < accuracy_gate:
        raise GateFailedError(
            f"iteration {iteration}: held-out accuracy {metrics['test_accuracy']:.3f} "
            f"below gate {accuracy_gate:.2f}",
            iteration=iteration,
        )
    return model, metrics, oracle


def distill_iteration(
    matrix: FeatureMatrix,
    ids: list[str],
    iteration: int,
    master_seed: int,
    distill_config: DistillConfig,
    oracle: PredictionOracle,
) -> FeatureSet:
    """Distill one iteration's dataset with a per-iteration derived seed."""
    cfg = DistillConfig(
        iterations=distill_config.iterations,
        students=distill_config.students,
        sample_fraction=distill_config.sample_fraction,
        max_depth=distill_config.max_depth,
        seed=derive_seed(master_seed, "distill", iteration),
    )
    return trustee_extract(oracle, matrix.subset(ids), cfg, iteration_index=iteration)


def run_pipeline(
    manifest: CorpusManifest,
    matrix: FeatureMatrix,
    composition: CompositionSpec,
    distill_config: DistillConfig,
    forest_params: ForestParams = ForestParams(),
    master_seed: int = 0,
    external_oracle: PredictionOracle | None = None,
    accuracy_gate: float = ACCURACY_GATE,
) -> PipelineResult:
    """Compose, split, train, gate, and distill once per iteration.

    Per iteration: draw the composed sample set, split 64:16:20 stratified by
    category, train the reference forest on the train split (unless an
    external oracle is supplied), require held-out test accuracy >= the gate,
    then distill over the iteration's full dataset labeled by the oracle.
    """
    plan = iteration_split(manifest, composition)
    results: list[IterationResult] = []
    for t, ids in enumerate(plan.iterations):
        model, metrics, oracle = train_iteration(
            manifest, matrix, ids, t, master_seed, forest_params,
            external_oracle=external_oracle, accuracy_gate=accuracy_gate,
        )
        feature_set = distill_iteration(matrix, ids, t, master_seed, distill_config, oracle)
        results.append(IterationResult(index=t, metrics=metrics, feature_set=feature_set, model=model))

    return PipelineResult(
        plan=plan,
        iterations=results,
        stability_top10_jaccard=_top10_jaccard([r.feature_set for r in results]),
    )
