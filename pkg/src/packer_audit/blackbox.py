"""Reference black-box classifier and the external-prediction adapter.

The in-repo classifier is a bagged random forest over the sparse static
features: Gini splits, sqrt-of-feature-count subsampling per node, majority
vote with ties toward benign. It exists to be distilled; the distillation
loop itself only ever sees a predict function, so an externally trained
model can be audited by supplying a sample_id -> label table instead.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cart import DecisionTree, fit_cart
from .errors import (
    ConfigError,
    DegenerateLabelsError,
    IoFailure,
    MissingPredictionError,
)
from .util import derive_seed

LABEL_TO_INT = {"benign": 0, "malicious": 1}
INT_TO_LABEL = {0: "benign", 1: "malicious"}

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 32
    max_depth: int = 12

    def to_dict(self) -> dict:
        return {"n_trees": self.n_trees, "max_depth": self.max_depth}

    @classmethod
    def from_dict(cls, raw: dict) -> "ForestParams":
        return cls(n_trees=int(raw.get("n_trees", 32)), max_depth=int(raw.get("max_depth", 12)))


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    params: ForestParams
    seed: int
    n_features: int
    metrics: dict[str, float]

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Majority vote across trees; exact ties go to benign (0)."""
        votes = np.zeros(len(X), dtype=np.int64)
        for tree in self.trees:
            votes += tree.predict(X)
        return (votes * 2 > len(self.trees)).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": "random_forest",
            "params": self.params.to_dict(),
            "seed": self.seed,
            "n_features": self.n_features,
            "metrics": self.metrics,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ForestModel":
        if raw.get("format_version") != MODEL_FORMAT_VERSION:
            raise ConfigError(f"unsupported model format {raw.get('format_version')!r}")
        return cls(
            trees=[DecisionTree.from_dict(t) for t in raw["trees"]],
            params=ForestParams.from_dict(raw["params"]),
            seed=int(raw["seed"]),
            n_features=int(raw["n_features"]),
            metrics={k: float(v) for k, v in raw.get("metrics", {}).items()},
        )


def train_forest(
    X: np.ndarray, y: np.ndarray, params: ForestParams, seed: int
) -> ForestModel:
    """Bagged Gini forest; deterministic for a given seed and worker-count
    independent because every tree derives its own rng from the master."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise DegenerateLabelsError("training labels contain a single class")
    n, n_feat = X.shape
    max_features = max(1, round(math.sqrt(n_feat)))
    trees = []
    for i in range(params.n_trees):
        rng = np.random.default_rng(derive_seed(seed, "tree", i))
        idx = rng.integers(0, n, size=n)
        trees.append(
            fit_cart(
                X[idx], y[idx], max_depth=params.max_depth,
                rng=rng, max_features=max_features,
            )
        )
    return ForestModel(trees=trees, params=params, seed=seed, n_features=n_feat, metrics={})


class PredictionOracle:
    """Uniform face over the reference forest or an external label table."""

    def __init__(
        self,
        forest: ForestModel | None = None,
        table: dict[str, int] | None = None,
    ):
        if (forest is None) == (table is None):
            raise ConfigError("oracle needs exactly one of forest or table")
        self.forest = forest
        self.table = table

    def labels(self, X: np.ndarray, ids: list[str]) -> np.ndarray:
        """One 0/1 label per row. The forest consumes features, the table
        consumes ids; both must cover every queried sample."""
        if self.forest is not None:
            return self.forest.predict(X)
        out = np.empty(len(ids), dtype=np.int64)
        for i, sid in enumerate(ids):
            if sid not in self.table:
                raise MissingPredictionError(f"no external prediction for {sid!r}")
            out[i] = self.table[sid]
        return out


def predict(oracle: PredictionOracle, X: np.ndarray | None = None, ids: list[str] | None = None) -> np.ndarray:
    if oracle.forest is not None:
        if X is None:
            raise ConfigError("forest oracle needs a feature matrix")
        return oracle.labels(X, ids or [])
    if ids is None:
        raise ConfigError("external oracle needs sample ids")
    return oracle.labels(np.zeros((len(ids), 0)), ids)


def evaluate(oracle: PredictionOracle, X: np.ndarray, y: np.ndarray, ids: list[str] | None = None) -> dict[str, float]:
    """Accuracy and macro F1 over the two classes."""
    y = np.asarray(y, dtype=np.int64)
    preds = oracle.labels(X, ids if ids is not None else [""] * len(y))
    accuracy = float(np.mean(preds == y)) if len(y) else 0.0
    f1s = []
    for cls in (0, 1):
        tp = int(np.sum((preds == cls) & (y == cls)))
        fp = int(np.sum((preds == cls) & (y != cls)))
        fn = int(np.sum((preds != cls) & (y == cls)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return {"accuracy": accuracy, "f1": float(sum(f1s) / 2)}


def load_external_predictions(path: str | Path) -> dict[str, int]:
    """CSV rows of sample_id,label (header optional)."""
    table: dict[str, int] = {}
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0] == "sample_id":
                    continue
                if len(row) < 2 or row[1] not in LABEL_TO_INT:
                    raise ConfigError(f"bad prediction row {row!r}")
                table[row[0]] = LABEL_TO_INT[row[1]]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return table
