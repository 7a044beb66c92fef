from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Dataset
from . import _kernels as K


@dataclass(frozen=True)
class DecisionTree:
    """Binary tree in flat arrays. ``left == -1`` marks a leaf.

    ``value`` holds the malicious proportion for classification trees and the
    Newton step for boosting trees; ``impurity`` is entropy (bits) or the
    residual variance respectively.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    impurity: np.ndarray
    n_features: int
    max_depth: int
    min_samples_leaf: int

    kind = "decision_tree"

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.left[node] == K.LEAF

    def apply(self, X: np.ndarray) -> np.ndarray:
        return K.apply_tree(
            np.ascontiguousarray(X, dtype=np.float64),
            self.feature, self.threshold, self.left, self.right, self.value,
        )

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.apply(X)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "impurity": self.impurity.tolist(),
            "n_features": self.n_features,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        ints = ("feature", "left", "right", "n_samples")
        arrays = {
            k: np.asarray(d[k], dtype=np.int64 if k in ints else np.float64)
            for k in ("feature", "threshold", "left", "right", "value", "n_samples", "impurity")
        }
        return cls(
            **arrays,
            n_features=int(d["n_features"]),
            max_depth=int(d["max_depth"]),
            min_samples_leaf=int(d["min_samples_leaf"]),
        )


def fit_tree(
    sorted_cols: K.Presorted,
    target: np.ndarray,
    hess: np.ndarray,
    criterion: int,
    max_depth: int,
    min_samples_leaf: int,
    keep: np.ndarray | None = None,
) -> DecisionTree:
    ids, vals = sorted_cols.copies(keep)
    nodes = K.grow_tree(ids, vals, target, hess, len(target), criterion, max_depth,
                        min_samples_leaf)
    return DecisionTree(*nodes, n_features=ids.shape[0], max_depth=max_depth,
                        min_samples_leaf=min_samples_leaf)


def train_decision_tree(data: Dataset, max_depth: int = 6, min_samples_leaf: int = 1) -> DecisionTree:
    """Greedy entropy tree; leaves store the malicious proportion."""
    if len(data) == 0:
        raise ValueError("cannot train a decision tree on an empty dataset")
    if max_depth < 0 or min_samples_leaf < 1:
        raise ValueError("max_depth must be >= 0 and min_samples_leaf >= 1")
    y = data.labels.astype(np.float64)
    return fit_tree(K.Presorted(data.features), y, np.ones_like(y), K.ENTROPY, max_depth,
                    min_samples_leaf)


def split_gains(tree: DecisionTree) -> np.ndarray:
    """Information gain of every internal node (zero on leaves)."""
    gains = np.zeros(tree.n_nodes)
    internal = tree.left != K.LEAF
    node = np.flatnonzero(internal)
    l, r = tree.left[node], tree.right[node]
    n = tree.n_samples[node]
    gains[node] = (
        tree.impurity[node]
        - tree.n_samples[l] / n * tree.impurity[l]
        - tree.n_samples[r] / n * tree.impurity[r]
    )
    return gains


def feature_importances(tree: DecisionTree) -> np.ndarray:
    """Sample-weighted information gain per feature, normalized to sum 1.

    A tree without splits gets an all-zero vector.
    """
    out = np.zeros(tree.n_features)
    gains = split_gains(tree)
    internal = np.flatnonzero(tree.left != K.LEAF)
    weights = tree.n_samples[internal] / tree.n_samples[0]
    np.add.at(out, tree.feature[internal], weights * gains[internal])
    total = out.sum()
    if total <= 0:
        return np.zeros(tree.n_features)
    return out / total


def rank_features(data: Dataset, max_depth: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """Feature indices by descending entropy importance (stable on ties) and the importances."""
    importances = feature_importances(train_decision_tree(data, max_depth=max_depth))
    order = np.argsort(-importances, kind="stable")
    return order, importances
