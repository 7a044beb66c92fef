"""Clean-label backdoor: trigger design and injection into benign training rows."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import Dataset, DatasetError
from .models import rank_features

VALUE_STRATEGIES = ("min_population", "benign_mode")
DEFAULT_BINS = 32
# keeps floor(rate * n) from losing a row to float error, e.g. 0.07 * 100
_FLOOR_SLACK = 1e-9


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class TriggerSpec:
    feature_indices: tuple[int, ...]
    values: tuple[float, ...]
    selection_strategy: str = "entropy"
    value_strategy: str = "min_population"

    def __post_init__(self):
        idx = tuple(int(i) for i in self.feature_indices)
        vals = tuple(float(v) for v in self.values)
        if len(set(idx)) != len(idx):
            raise AttackError("trigger feature indices must be unique")
        if len(idx) != len(vals):
            raise AttackError("one trigger value per feature index required")
        if self.value_strategy not in VALUE_STRATEGIES:
            raise AttackError(f"unknown value strategy {self.value_strategy!r}")
        object.__setattr__(self, "feature_indices", idx)
        object.__setattr__(self, "values", vals)

    def apply(self, features: np.ndarray) -> np.ndarray:
        out = np.array(features, dtype=np.float64, copy=True)
        out[:, list(self.feature_indices)] = self.values
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_indices"] = list(self.feature_indices)
        d["values"] = list(self.values)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TriggerSpec":
        return cls(**d)


@dataclass(frozen=True)
class AttackConfig:
    trigger_size: int = 4
    poison_rate: float = 0.01
    value_strategy: str = "min_population"
    seed: int = 0
    histogram_bins: int = DEFAULT_BINS

    def __post_init__(self):
        if self.trigger_size < 1:
            raise AttackError("trigger_size must be >= 1")
        if not 0.0 < self.poison_rate <= 0.1:
            raise AttackError("poison_rate must lie in (0, 0.1]")
        if self.value_strategy not in VALUE_STRATEGIES:
            raise AttackError(f"unknown value strategy {self.value_strategy!r}")
        if self.histogram_bins < 1:
            raise AttackError("histogram_bins must be >= 1")


def select_trigger_features(train: Dataset, k: int, max_depth: int = 6) -> list[int]:
    """Top ``k`` features by entropy importance of a tree fit on ``train``."""
    if not 1 <= k <= train.n_features:
        raise AttackError(f"k={k} outside [1, {train.n_features}]")
    order, importances = rank_features(train, max_depth=max_depth)
    if not importances.any():
        raise AttackError("all feature importances are zero; no trigger features to pick")
    return [int(i) for i in order[:k]]


def min_population_value(column: np.ndarray, bins: int = DEFAULT_BINS) -> float:
    """Midpoint of the least-populated occupied bin of an equal-width histogram.

    Ties go to the lowest bin; a constant column returns its value.
    """
    lo, hi = float(column.min()), float(column.max())
    if lo == hi:
        return lo
    counts, edges = np.histogram(column, bins=bins, range=(lo, hi))
    occupied = np.flatnonzero(counts)
    b = occupied[np.argmin(counts[occupied])]
    return float(0.5 * (edges[b] + edges[b + 1]))


def benign_mode_value(column: np.ndarray) -> float:
    """Most frequent value, the smallest one on ties."""
    values, counts = np.unique(column, return_counts=True)
    return float(values[np.argmax(counts)])


def select_trigger_values(
    train: Dataset,
    indices: Sequence[int],
    value_strategy: str = "min_population",
    bins: int = DEFAULT_BINS,
) -> list[float]:
    if len(train) == 0:
        raise AttackError("empty training set")
    if any(not 0 <= i < train.n_features for i in indices):
        raise AttackError("trigger feature index out of range")
    if value_strategy == "min_population":
        return [min_population_value(train.features[:, i], bins) for i in indices]
    if value_strategy == "benign_mode":
        benign = train.features[train.labels == 0]
        if len(benign) == 0:
            raise AttackError("benign_mode needs benign rows")
        return [benign_mode_value(benign[:, i]) for i in indices]
    raise AttackError(f"unknown value strategy {value_strategy!r}")


def design_trigger(train: Dataset, config: AttackConfig, importance_depth: int = 6) -> TriggerSpec:
    indices = select_trigger_features(train, config.trigger_size, importance_depth)
    values = select_trigger_values(train, indices, config.value_strategy, config.histogram_bins)
    return TriggerSpec(tuple(indices), tuple(values), "entropy", config.value_strategy)


def poison_count(n_rows: int, poison_rate: float) -> int:
    return int(math.floor(poison_rate * n_rows + _FLOOR_SLACK))


def inject_poison(
    train: Dataset, trigger: TriggerSpec, poison_rate: float, seed: int
) -> tuple[Dataset, np.ndarray]:
    """Stamp the trigger on ``floor(rate * |train|)`` random benign rows.

    Labels are never touched. Returns the poisoned copy, with ``poison_mask``
    marking the stamped rows, and their row ids.
    """
    n_poison = poison_count(len(train), poison_rate)
    if n_poison < 1:
        raise AttackError(f"poison rate {poison_rate} on {len(train)} rows yields no poison rows")
    benign = np.flatnonzero(train.labels == 0)
    if len(benign) < n_poison:
        raise AttackError(f"need {n_poison} benign rows, only {len(benign)} available")
    if any(not 0 <= i < train.n_features for i in trigger.feature_indices):
        raise AttackError("trigger feature index out of range")
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(benign, n_poison, replace=False))
    features = train.features.copy()
    features[np.ix_(rows, list(trigger.feature_indices))] = trigger.values
    mask = np.zeros(len(train), dtype=bool)
    if train.poison_mask is not None:
        mask |= train.poison_mask
    mask[rows] = True
    poisoned = Dataset(features, train.labels, train.feature_names, train.row_ids, mask)
    return poisoned, train.row_ids[rows]


def make_backdoored_test(test: Dataset, trigger: TriggerSpec) -> Dataset:
    """Malicious test rows only, with the trigger written in."""
    malicious = test.labels == 1
    if not malicious.any():
        raise AttackError("test set has no malicious rows to backdoor")
    try:
        rows = test.take(malicious)
        return rows.with_features(trigger.apply(rows.features))
    except (IndexError, DatasetError) as exc:
        raise AttackError(f"trigger does not fit the test columns: {exc}") from exc
