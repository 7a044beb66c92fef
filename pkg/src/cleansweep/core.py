"""Dataset container, stratified splitting, column selection and scaling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

STD_FLOOR = 1e-12

RESERVED_COLUMNS = ("row_id", "label", "is_poison")


class DatasetError(ValueError):
    """Malformed dataset, bad shapes or unsupported labels."""


@dataclass(frozen=True)
class Dataset:
    """Labeled feature matrix. Label 0 is benign, 1 is malicious.

    ``poison_mask`` is ground truth for evaluation only; the defense works on
    :meth:`blind` copies that do not carry it.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    row_ids: np.ndarray
    poison_mask: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {features.shape}")
        labels = np.asarray(self.labels)
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise DatasetError("labels must be binary (0 = benign, 1 = malicious)")
        labels = labels.astype(np.int8)
        row_ids = np.asarray(self.row_ids, dtype=np.int64)
        names = tuple(str(n) for n in self.feature_names)
        n = features.shape[0]
        if labels.shape != (n,) or row_ids.shape != (n,):
            raise DatasetError(
                f"row count mismatch: features {n}, labels {labels.shape}, row_ids {row_ids.shape}"
            )
        if len(names) != features.shape[1]:
            raise DatasetError(
                f"{len(names)} feature names for {features.shape[1]} columns"
            )
        if len(set(names)) != len(names):
            raise DatasetError("feature names must be unique")
        if len(np.unique(row_ids)) != n:
            raise DatasetError("row ids must be unique")
        mask = self.poison_mask
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (n,):
                raise DatasetError("poison_mask length must equal row count")
            if (mask & (labels != 0)).any():
                raise DatasetError("poison_mask may only mark benign rows")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "row_ids", row_ids)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "poison_mask", mask)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def benign(self) -> np.ndarray:
        return self.labels == 0

    @property
    def malicious(self) -> np.ndarray:
        return self.labels == 1

    def take(self, rows) -> "Dataset":
        """Row subset (boolean mask or index array), metadata carried along."""
        rows = np.asarray(rows)
        mask = None if self.poison_mask is None else self.poison_mask[rows]
        return Dataset(
            self.features[rows],
            self.labels[rows],
            self.feature_names,
            self.row_ids[rows],
            mask,
        )

    def with_features(self, features: np.ndarray) -> "Dataset":
        return replace(self, features=features)

    def blind(self) -> "Dataset":
        """Copy without the ground-truth poison mask."""
        return replace(self, poison_mask=None)


def concat(parts: Sequence[Dataset]) -> Dataset:
    """Stack datasets that share a column layout."""
    if not parts:
        raise DatasetError("nothing to concatenate")
    names = parts[0].feature_names
    for p in parts[1:]:
        if p.feature_names != names:
            raise DatasetError("column layouts differ")
    masks = [p.poison_mask for p in parts]
    if all(m is None for m in masks):
        mask = None
    else:
        mask = np.concatenate(
            [np.zeros(len(p), bool) if m is None else m for p, m in zip(parts, masks)]
        )
    return Dataset(
        np.vstack([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
        names,
        np.concatenate([p.row_ids for p in parts]),
        mask,
    )


def split_dataset(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split, deterministic in ``seed``.

    Each class contributes ``round(test_fraction * class_size)`` rows to the
    test side, clamped so both sides keep at least one row of every class.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DatasetError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    test_rows = []
    for label in (0, 1):
        rows = np.flatnonzero(data.labels == label)
        if len(rows) < 2:
            raise DatasetError(
                f"insufficient class support: label {label} has {len(rows)} rows, need >= 2"
            )
        n_test = int(np.clip(round(test_fraction * len(rows)), 1, len(rows) - 1))
        test_rows.append(rng.permutation(rows)[:n_test])
    is_test = np.zeros(len(data), dtype=bool)
    is_test[np.concatenate(test_rows)] = True
    return data.take(~is_test), data.take(is_test)


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.std.shape:
            raise DatasetError("mean and std lengths differ")
        if not (self.std > 0).all():
            raise DatasetError("standard deviations must be positive")

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


def fit_standardization(x: np.ndarray) -> StandardizationStats:
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)  # population std
    std = np.where(std < STD_FLOOR, 1.0, std)
    return StandardizationStats(mean, std)


def standardize(
    data: Dataset, stats: Optional[StandardizationStats] = None
) -> tuple[Dataset, StandardizationStats]:
    """Apply ``(x - mean) / std`` per column; fit the stats on ``data`` when none are given."""
    if stats is None:
        stats = fit_standardization(data.features)
    elif stats.mean.shape != (data.n_features,):
        raise DatasetError(
            f"stats fit on {stats.mean.shape[0]} columns, data has {data.n_features}"
        )
    return data.with_features((data.features - stats.mean) / stats.std), stats


def select_columns(data: Dataset, indices: Sequence[int]) -> Dataset:
    indices = [int(i) for i in indices]
    if len(set(indices)) != len(indices):
        raise DatasetError(f"duplicate column index in {indices}")
    bad = [i for i in indices if not 0 <= i < data.n_features]
    if bad:
        raise DatasetError(f"column index out of range: {bad} (width {data.n_features})")
    return replace(
        data,
        features=data.features[:, indices],
        feature_names=tuple(data.feature_names[i] for i in indices),
    )


def write_csv(data: Dataset, path, include_poison: bool = True) -> None:
    """Write the dataset in the CSV layout read by :func:`cleansweep.ingest.load_numeric_csv`."""
    header = ["row_id", *data.feature_names, "label"]
    with_mask = include_poison and data.poison_mask is not None
    if with_mask:
        header.append("is_poison")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(data)):
            row = [str(int(data.row_ids[i]))]
            row.extend(repr(float(v)) for v in data.features[i])
            row.append(str(int(data.labels[i])))
            if with_mask:
                row.append(str(int(data.poison_mask[i])))
            writer.writerow(row)


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
