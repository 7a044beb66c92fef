"""Loader for pre-extracted numeric feature CSVs."""

from __future__ import annotations

import csv
import math

import numpy as np

from ..core import Dataset, DatasetError


class CsvFormatError(DatasetError):
    pass


def _number(cell: str, line: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise CsvFormatError(f"row {line}, column {column!r}: non-numeric value {cell!r}") from None
    if math.isnan(value):
        raise CsvFormatError(f"row {line}, column {column!r}: NaN is not allowed")
    return value


def load_numeric_csv(path) -> Dataset:
    """Read ``[row_id,] feature..., label[, is_poison]``.

    Rows are numbered from 1 at the header in error messages. Row ids follow
    file order when there is no ``row_id`` column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file, header expected") from None
        if "label" not in header:
            raise CsvFormatError(f"{path}: missing required 'label' column")
        has_id = header[0] == "row_id"
        has_poison = "is_poison" in header
        label_col = header.index("label")
        poison_col = header.index("is_poison") if has_poison else None
        feature_cols = [i for i, h in enumerate(header)
                        if h not in ("row_id", "label", "is_poison")]
        names = [header[i] for i in feature_cols]
        rows, labels, ids, poison = [], [], [], []
        for line, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(header):
                raise CsvFormatError(f"row {line}: {len(cells)} cells, header has {len(header)}")
            rows.append([_number(cells[i], line, header[i]) for i in feature_cols])
            label = _number(cells[label_col], line, "label")
            if label not in (0.0, 1.0):
                raise CsvFormatError(f"row {line}: label must be 0 or 1, got {cells[label_col]!r}")
            labels.append(int(label))
            if has_id:
                ids.append(int(_number(cells[0], line, "row_id")))
            if has_poison:
                poison.append(_number(cells[poison_col], line, "is_poison") != 0)
    n = len(rows)
    features = np.array(rows, dtype=np.float64).reshape(n, len(names))
    return Dataset(
        features,
        np.array(labels, dtype=np.int8),
        names,
        np.array(ids, dtype=np.int64) if has_id else np.arange(n),
        np.array(poison, dtype=bool) if has_poison else None,
    )
