from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from . import _kernels as K
from .tree import DecisionTree, fit_tree


@dataclass(frozen=True)
class GbdtConfig:
    n_rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 6
    min_samples_leaf: int = 5
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must lie in (0, 1]")
        if self.max_depth < 0 or self.min_samples_leaf < 1:
            raise ValueError("max_depth must be >= 0 and min_samples_leaf >= 1")


@dataclass(frozen=True)
class GbdtModel:
    """Additive log-odds model: ``init_score + learning_rate * sum(tree outputs)``."""

    config: GbdtConfig
    init_score: float
    trees: tuple[DecisionTree, ...]
    n_features: int
    train_loss: tuple[float, ...] = field(default=(), compare=False)

    kind = "gbdt"

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        score = np.full(X.shape[0], self.init_score)
        for tree in self.trees:
            score += self.config.learning_rate * tree.apply(X)
        return score

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return expit(self.decision_function(X))

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "init_score": self.init_score,
            "n_features": self.n_features,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtModel":
        return cls(
            GbdtConfig(**d["config"]),
            float(d["init_score"]),
            tuple(DecisionTree.from_dict(t) for t in d["trees"]),
            int(d["n_features"]),
        )


def _log_loss(y: np.ndarray, score: np.ndarray) -> float:
    # log(1 + e^s) - y*s, stable in both tails
    return float(np.mean(np.logaddexp(0.0, score) - y * score))


def train_gbdt(X: np.ndarray, y: np.ndarray, config: GbdtConfig = GbdtConfig()) -> GbdtModel:
    """Gradient boosting on the logistic loss.

    Each round fits a squared-error regression tree to the residuals
    ``y - p`` and sets leaf values to one Newton step,
    ``sum(residual) / sum(p * (1 - p))``, shrunk by the learning rate.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    base_rate = y.mean()
    if n == 0 or base_rate in (0.0, 1.0):
        raise ValueError("gradient boosting needs both classes in the training data")
    init = float(np.log(base_rate / (1.0 - base_rate)))
    rng = np.random.default_rng(config.seed)
    sorted_cols = K.Presorted(X)
    n_sub = max(1, int(round(config.subsample * n)))

    score = np.full(n, init)
    trees = []
    losses = []
    for _ in range(config.n_rounds):
        p = expit(score)
        residual = y - p
        hess = p * (1.0 - p)
        keep = None
        if n_sub < n:
            keep = np.zeros(n, dtype=bool)
            keep[rng.choice(n, n_sub, replace=False)] = True
        tree = fit_tree(sorted_cols, residual, hess, K.SQUARED_ERROR,
                        config.max_depth, config.min_samples_leaf, keep)
        score += config.learning_rate * tree.apply(X)
        trees.append(tree)
        losses.append(_log_loss(y, score))
    return GbdtModel(config, init, tuple(trees), X.shape[1], tuple(losses))
