from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from ..core import fit_standardization


@dataclass(frozen=True)
class LinearConfig:
    n_iterations: int = 500
    step_size: float = 0.5
    seed: int = 0  # unused: full-batch descent is deterministic


@dataclass(frozen=True)
class LinearModel:
    """Logistic regression on internally standardized inputs."""

    config: LinearConfig
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray

    kind = "linear"

    @property
    def n_features(self) -> int:
        return len(self.weights)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.std
        return expit(Z @ self.weights + self.bias)

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(
            LinearConfig(**d["config"]),
            np.asarray(d["weights"], dtype=np.float64),
            float(d["bias"]),
            np.asarray(d["mean"], dtype=np.float64),
            np.asarray(d["std"], dtype=np.float64),
        )


def train_linear(X: np.ndarray, y: np.ndarray, config: LinearConfig = LinearConfig()) -> LinearModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0 or y.min() == y.max():
        raise ValueError("logistic regression needs both classes in the training data")
    stats = fit_standardization(X)
    Z = (X - stats.mean) / stats.std
    n = len(y)
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(config.n_iterations):
        err = expit(Z @ w + b) - y
        w -= config.step_size * (Z.T @ err) / n
        b -= config.step_size * err.mean()
    return LinearModel(config, w, float(b), stats.mean, stats.std)
