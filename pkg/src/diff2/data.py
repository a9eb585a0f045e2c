"""CSV ingestion, 80/20 split and normalisation.

Feature statistics (mean, population std) are fitted on the train split
only. The regression target is divided by the maximum absolute target over
train and test together. Constant features are dropped.

Normalised datasets can be cached as ``.npz`` files (format version 1,
see :func:`save_cache`).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .numerics import RngStream

log = logging.getLogger(__name__)

CACHE_FORMAT_VERSION = 1

__all__ = [
    "CsvSchema",
    "DATASET_PRESETS",
    "DataError",
    "NormalizationStats",
    "RawDataset",
    "fit_and_apply_normalization",
    "load_csv",
    "load_cache",
    "save_cache",
    "train_test_split",
    "write_csv",
]


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class CsvSchema:
    """Which columns to read.

    ``target`` names the target column (default: last column); ``drop``
    lists columns to discard. ``features=None`` keeps every other column.
    """

    target: Optional[str] = None
    features: Optional[Sequence[str]] = None
    drop: Sequence[str] = ()
    task: str = "regression"


@dataclass
class RawDataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    target_name: str
    task: str = "regression"
    rejected_rows: int = 0

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx: np.ndarray) -> "RawDataset":
        return RawDataset(self.X[idx], self.y[idx], list(self.feature_names), self.target_name, self.task)


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray
    kept_features: list[str]
    dropped_features: list[str] = field(default_factory=list)
    target_scale: float = 1.0


# column rules for the public datasets used in the experiments
DATASET_PRESETS = {
    "california_housing": CsvSchema(target="MedHouseVal"),
    "gas_turbine": CsvSchema(target="CO", drop=("NOX",)),
}


# common spellings of missing values in public CSV dumps
_MISSING = {"", "na", "nan", "?", "null", "none"}


def load_csv(path, schema: CsvSchema = CsvSchema()) -> RawDataset:
    """Read a headered, comma-separated numeric CSV.

    Rows with missing cells are skipped (and counted); any other
    non-numeric cell raises :class:`DataError` naming the line and column.
    Classification targets may be arbitrary labels; they are mapped to
    class indices in sorted label order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        target = schema.target or header[-1]
        if target not in header:
            raise DataError(f"{path}: target column {target!r} not in header")
        if schema.features is not None:
            missing = [f for f in schema.features if f not in header]
            if missing:
                raise DataError(f"{path}: feature columns {missing} not in header")
            features = list(schema.features)
        else:
            features = [h for h in header if h != target and h not in set(schema.drop)]
        f_idx = [header.index(f) for f in features]
        t_idx = header.index(target)
        rows, labels = [], []
        rejected = 0
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line_no}: expected {len(header)} cells, got {len(row)}")
            cells = [row[i].strip() for i in f_idx]
            label = row[t_idx].strip()
            if any(c.lower() in _MISSING for c in cells) or label.lower() in _MISSING:
                rejected += 1
                continue
            values = []
            for name, cell in zip(features, cells):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}:{line_no}: column {name!r} is not numeric: {cell!r}") from None
            if schema.task == "regression":
                try:
                    label = float(label)
                except ValueError:
                    raise DataError(f"{path}:{line_no}: column {target!r} is not numeric: {label!r}") from None
            rows.append(values)
            labels.append(label)
    if rejected:
        log.warning("%s: skipped %d rows with missing values", path, rejected)
    X = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(features))
    if schema.task == "classification":
        classes = sorted(set(labels))
        lookup = {c: i for i, c in enumerate(classes)}
        y = np.asarray([lookup[c] for c in labels], dtype=np.int64)
    else:
        y = np.asarray(labels, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path}: non-finite feature values")
    return RawDataset(X, y, features, target, schema.task, rejected)


def write_csv(path, data: RawDataset) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(data.feature_names) + [data.target_name])
        for xrow, t in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in xrow] + [repr(t.item())])


def train_test_split(data: RawDataset, stream: RngStream, fraction: float = 0.8):
    """Random split with ``ceil(fraction * n)`` training rows."""
    n = len(data)
    n_train = math.ceil(fraction * n)
    perm = stream.generator().permutation(n)
    return data.subset(perm[:n_train]), data.subset(perm[n_train:])


def fit_and_apply_normalization(train: RawDataset, test: RawDataset):
    """Standardise features with train statistics and scale the target.

    Returns ``(train', test', stats)``.
    """
    if len(train) == 0:
        raise DataError("cannot fit normalisation on an empty train split")
    mean = train.X.mean(axis=0)
    std = train.X.std(axis=0)
    keep = std > 0
    dropped = [f for f, k in zip(train.feature_names, keep) if not k]
    if dropped:
        log.warning("dropping zero-variance features: %s", ", ".join(dropped))
    kept = [f for f, k in zip(train.feature_names, keep) if k]
    mean, std = mean[keep], std[keep]

    def apply(d: RawDataset, scale: float) -> RawDataset:
        X = (d.X[:, keep] - mean) / std
        y = d.y / scale if d.task == "regression" else d.y
        return RawDataset(X, y, kept, d.target_name, d.task)

    scale = 1.0
    if train.task == "regression":
        scale = float(max(np.max(np.abs(train.y)), np.max(np.abs(test.y)) if len(test) else 0.0))
        if scale == 0:
            scale = 1.0
    stats = NormalizationStats(mean, std, kept, dropped, scale)
    return apply(train, scale), apply(test, scale), stats


def save_cache(path, train: RawDataset, test: RawDataset, stats: NormalizationStats) -> None:
    """Write a normalised split as ``.npz`` (arrays plus names and stats)."""
    np.savez(
        path,
        version=CACHE_FORMAT_VERSION,
        X_train=train.X, y_train=train.y, X_test=test.X, y_test=test.y,
        feature_names=np.asarray(train.feature_names),
        target_name=train.target_name,
        task=train.task,
        mean=stats.mean, std=stats.std, target_scale=stats.target_scale,
        dropped=np.asarray(stats.dropped_features, dtype=str),
    )


def load_cache(path):
    with np.load(path, allow_pickle=False) as z:
        if int(z["version"]) != CACHE_FORMAT_VERSION:
            raise DataError(f"{path}: unsupported cache version {int(z['version'])}")
        names = [str(s) for s in z["feature_names"]]
        target, task = str(z["target_name"]), str(z["task"])
        train = RawDataset(z["X_train"], z["y_train"], names, target, task)
        test = RawDataset(z["X_test"], z["y_test"], names, target, task)
        stats = NormalizationStats(
            z["mean"], z["std"], names, [str(s) for s in z["dropped"]], float(z["target_scale"])
        )
    return train, test, stats
