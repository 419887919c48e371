"""Greedy binary CART induction with Gini splits.

Shared by the reference forest (with per-node feature subsampling) and the
surrogate students. Split scoring uses the closed form

    score = sum(l_k^2)/n_L + sum(r_k^2)/n_R - sum(c_k^2)/n

which is the parent-weighted Gini decrease times n. Candidates are the
midpoints of consecutive distinct sorted values; ties break to the lower
feature index, then the lower threshold; a node splits only on a strictly
positive score. Labels are 0 (benign) and 1 (malicious); leaf ties resolve
to 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError


@dataclass
class TreeNode:
    n: int
    counts: tuple[int, int]
    impurity: float
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def label(self) -> int:
        c0, c1 = self.counts
        return 1 if c1 > c0 else 0

    def to_dict(self) -> dict:
        d = {"n": self.n, "counts": list(self.counts), "impurity": self.impurity}
        if not self.is_leaf:
            d.update({
                "feature": self.feature,
                "threshold": self.threshold,
                "left": self.left.to_dict(),
                "right": self.right.to_dict(),
            })
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "TreeNode":
        node = cls(n=int(raw["n"]), counts=tuple(raw["counts"]), impurity=float(raw["impurity"]))
        if "feature" in raw:
            node.feature = int(raw["feature"])
            node.threshold = float(raw["threshold"])
            node.left = cls.from_dict(raw["left"])
            node.right = cls.from_dict(raw["right"])
        return node


@dataclass
class DecisionTree:
    root: TreeNode
    n_features: int

    def predict_row(self, x: np.ndarray) -> int:
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node.label

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.fromiter((self.predict_row(row) for row in X), dtype=np.int64, count=len(X))

    def node_count(self) -> int:
        def count(node: TreeNode) -> int:
            if node.is_leaf:
                return 1
            return 1 + count(node.left) + count(node.right)
        return count(self.root)

    def split_features(self) -> set[int]:
        out: set[int] = set()

        def walk(node: TreeNode) -> None:
            if node.is_leaf:
                return
            out.add(node.feature)
            walk(node.left)
            walk(node.right)

        walk(self.root)
        return out

    def to_dict(self) -> dict:
        return {"n_features": self.n_features, "root": self.root.to_dict()}

    @classmethod
    def from_dict(cls, raw: dict) -> "DecisionTree":
        return cls(root=TreeNode.from_dict(raw["root"]), n_features=int(raw["n_features"]))


def _gini(counts: tuple[int, int]) -> float:
    n = counts[0] + counts[1]
    if n == 0:
        return 0.0
    p0 = counts[0] / n
    p1 = counts[1] / n
    return 1.0 - (p0 * p0 + p1 * p1)


def _best_split_of_feature(col: np.ndarray, y: np.ndarray, c_sq_over_n: float) -> tuple[float, float] | None:
    """Best (score, threshold) for one feature column, or None when the
    column is constant. Ties between thresholds go to the lower threshold."""
    order = np.argsort(col, kind="stable")
    values = col[order]
    labels = y[order]
    n = len(values)
    boundaries = np.nonzero(values[:-1] < values[1:])[0]
    if len(boundaries) == 0:
        return None
    n_left = boundaries + 1
    ones_left = np.cumsum(labels)[boundaries]
    zeros_left = n_left - ones_left
    n_right = n - n_left
    ones_right = int(labels.sum()) - ones_left
    zeros_right = n_right - ones_right
    a = zeros_left.astype(np.float64) ** 2 + ones_left.astype(np.float64) ** 2
    b = zeros_right.astype(np.float64) ** 2 + ones_right.astype(np.float64) ** 2
    scores = a / n_left + b / n_right - c_sq_over_n
    best = int(np.argmax(scores))  # first max = lowest threshold
    threshold = (values[boundaries[best]] + values[boundaries[best] + 1]) / 2.0
    return float(scores[best]), float(threshold)


def _grow(
    X: np.ndarray,
    y: np.ndarray,
    depth: int,
    max_depth: int,
    rng: np.random.Generator | None,
    max_features: int | None,
) -> TreeNode:
    n = len(y)
    ones = int(y.sum())
    counts = (n - ones, ones)
    node = TreeNode(n=n, counts=counts, impurity=_gini(counts))
    if depth >= max_depth or counts[0] == 0 or counts[1] == 0:
        return node

    n_feat = X.shape[1]
    if rng is not None and max_features is not None and max_features < n_feat:
        candidates = np.sort(rng.choice(n_feat, size=max_features, replace=False))
    else:
        candidates = np.arange(n_feat)

    c_sq_over_n = (counts[0] ** 2 + counts[1] ** 2) / n
    best: tuple[float, int, float] | None = None  # (score, feature, threshold)
    for f in candidates:
        found = _best_split_of_feature(X[:, f], y, c_sq_over_n)
        if found is None:
            continue
        score, threshold = found
        if best is None or score > best[0]:
            best = (score, int(f), threshold)
    if best is None or best[0] <= 0.0:
        return node

    _, feature, threshold = best
    mask = X[:, feature] <= threshold
    node.feature = feature
    node.threshold = threshold
    node.left = _grow(X[mask], y[mask], depth + 1, max_depth, rng, max_features)
    node.right = _grow(X[~mask], y[~mask], depth + 1, max_depth, rng, max_features)
    return node


def fit_cart(
    X: np.ndarray,
    y_target: np.ndarray,
    max_depth: int = 8,
    seed: int = 0,
    rng: np.random.Generator | None = None,
    max_features: int | None = None,
) -> DecisionTree:
    """Fit a tree to black-box target labels.

    Induction is deterministic; seed/rng only matter when max_features
    enables per-node feature subsampling (forest trees). A pure-label sample
    yields a single leaf; an empty sample is degenerate.
    """
    X = np.asarray(X, dtype=np.float64)
    y_target = np.asarray(y_target, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y_target):
        raise DegenerateSampleError("X and y_target shapes do not agree")
    if len(y_target) == 0:
        raise DegenerateSampleError("cannot fit a tree on an empty sample")
    if rng is None and max_features is not None:
        rng = np.random.default_rng(seed)
    root = _grow(X, y_target, 0, max_depth, rng, max_features)
    return DecisionTree(root=root, n_features=X.shape[1])


def gini_importance(tree: DecisionTree) -> dict[int, float]:
    """Per-feature impurity-decrease importance, normalized to sum 1.

    Each split contributes (n_node / n_root) * (impurity - weighted child
    impurity). Features absent from splits are omitted; a leaf-only tree
    gives an empty map.
    """
    totals: dict[int, float] = {}
    n_root = tree.root.n

    def walk(node: TreeNode) -> None:
        if node.is_leaf:
            return
        child_impurity = (
            node.left.n / node.n * node.left.impurity
            + node.right.n / node.n * node.right.impurity
        )
        decrease = node.impurity - child_impurity
        totals[node.feature] = totals.get(node.feature, 0.0) + node.n / n_root * decrease
        walk(node.left)
        walk(node.right)

    walk(tree.root)
    total = sum(totals.values())
    if total <= 0.0:
        return {}
    return {f: v / total for f, v in totals.items()}
