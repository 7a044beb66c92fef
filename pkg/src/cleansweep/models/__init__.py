"""Classifiers, losses and utility metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..core import Dataset
from .gbdt import GbdtConfig, GbdtModel, train_gbdt
from .linear import LinearConfig, LinearModel, train_linear
from .tree import (
    DecisionTree,
    feature_importances,
    rank_features,
    split_gains,
    train_decision_tree,
)

TrainedClassifier = Union[DecisionTree, GbdtModel, LinearModel]

LOSS_EPS = 1e-12
MODEL_SCHEMA_VERSION = 1


class ModelError(ValueError):
    pass


def train_surrogate(data: Dataset, kind: str = "gbdt", config=None) -> TrainedClassifier:
    """Train a ``gbdt``, ``linear`` or ``decision_tree`` classifier on ``data``."""
    if len(data) == 0 or data.labels.min() == data.labels.max():
        raise ModelError("surrogate training needs both classes present")
    if kind == "gbdt":
        return train_gbdt(data.features, data.labels, config or GbdtConfig())
    if kind == "linear":
        return train_linear(data.features, data.labels, config or LinearConfig())
    if kind == "decision_tree":
        depth = getattr(config, "max_depth", 6)
        leaf = getattr(config, "min_samples_leaf", 1)
        return train_decision_tree(data, depth, leaf)
    raise ModelError(f"unknown model kind {kind!r}")


def default_config(kind: str):
    return {"gbdt": GbdtConfig(), "linear": LinearConfig(), "decision_tree": GbdtConfig()}[kind]


def config_from_dict(kind: str, d: dict | None):
    cls = LinearConfig if kind == "linear" else GbdtConfig
    return cls(**(d or {}))


def predict_proba(model: TrainedClassifier, data: Dataset | np.ndarray) -> np.ndarray:
    X = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ModelError(f"model expects {model.n_features} columns, got shape {X.shape}")
    return model.predict_proba(X)


def log_losses(probabilities: np.ndarray, labels: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(probabilities, dtype=np.float64), LOSS_EPS, 1.0 - LOSS_EPS)
    y = np.asarray(labels, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def mean_log_loss(model: TrainedClassifier, data: Dataset, return_rows: bool = False):
    """Mean binary cross-entropy of ``model`` on ``data``; optionally the per-row losses too."""
    if len(data) == 0:
        raise ModelError("log-loss of an empty dataset is undefined")
    rows = log_losses(predict_proba(model, data), data.labels)
    if return_rows:
        return float(rows.mean()), rows
    return float(rows.mean())


@dataclass(frozen=True)
class Metrics:
    f1: float
    fpr: float
    precision: float
    recall: float
    accuracy: float
    tp: int
    fp: int
    fn: int
    tn: int


def compute_metrics(probabilities, labels, threshold: float = 0.5) -> Metrics:
    """Confusion-matrix metrics with malicious (1) as the positive class."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ModelError("probabilities and labels differ in length")
    if p.size == 0:
        raise ModelError("metrics of an empty prediction set are undefined")
    pred = p >= threshold
    pos = y == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    fpr = fp / (fp + tn) if fp + tn else 0.0
    return Metrics(f1, fpr, precision, recall, (tp + tn) / y.size, tp, fp, fn, tn)


_KINDS = {"decision_tree": DecisionTree, "gbdt": GbdtModel, "linear": LinearModel}


def model_to_json(model: TrainedClassifier) -> str:
    doc = {"schema_version": MODEL_SCHEMA_VERSION, "kind": model.kind, "model": model.to_dict()}
    return json.dumps(doc, sort_keys=True)


def model_from_json(text: str) -> TrainedClassifier:
    doc = json.loads(text)
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ModelError(f"unsupported model schema version {doc.get('schema_version')!r}")
    try:
        cls = _KINDS[doc["kind"]]
    except KeyError:
        raise ModelError(f"unknown model kind {doc.get('kind')!r}") from None
    return cls.from_dict(doc["model"])


__all__ = [
    "DecisionTree",
    "GbdtConfig",
    "GbdtModel",
    "LinearConfig",
    "LinearModel",
    "Metrics",
    "ModelError",
    "TrainedClassifier",
    "compute_metrics",
    "config_from_dict",
    "default_config",
    "feature_importances",
    "log_losses",
    "mean_log_loss",
    "model_from_json",
    "model_to_json",
    "predict_proba",
    "rank_features",
    "split_gains",
    "train_decision_tree",
    "train_gbdt",
    "train_linear",
    "train_surrogate",
]
