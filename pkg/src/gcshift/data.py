"""Sample containers, CSV ingestion, unit-interval scaling and splits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from gcshift.seeding import make_rng

SIMPLEX_ATOL = 1e-12


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with optional integer labels in ``1..k``.

    Features are finite reals; the estimators expect them mapped into
    ``[0, 1]`` by :func:`apply_scaling` first, but raw coordinates are
    allowed so that generators and diagnostics can carry them too.
    """

    features: np.ndarray
    labels: np.ndarray | None = None
    k: int = 2
    columns: tuple[str, ...] | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DataError(f"features must be a non-empty n x d matrix, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError("features contain non-finite values")
        if self.k < 2:
            raise DataError(f"k must be at least 2, got {self.k}")
        object.__setattr__(self, "features", _frozen(x))
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (x.shape[0],):
                raise DataError(f"labels shape {y.shape} does not match n={x.shape[0]}")
            if y.size and not np.all(np.equal(np.mod(y, 1), 0)):
                raise DataError("labels must be integers")
            y = y.astype(np.int64)
            if np.any(y < 1) or np.any(y > self.k):
                raise DataError(f"label out of range 1..{self.k}")
            object.__setattr__(self, "labels", _frozen(y))
        if self.columns is not None:
            cols = tuple(self.columns)
            if len(cols) != x.shape[1]:
                raise DataError("column names do not match feature dimension")
            object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.features[idx], labels, self.k, self.columns)

    def without_labels(self) -> "Dataset":
        return Dataset(self.features, None, self.k, self.columns)

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(features, self.labels, self.k, self.columns)


def check_simplex(p, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Validate a probability vector and return it as a float array."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise ValueError(f"a simplex vector needs at least two entries, got shape {p.shape}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"simplex entries must be finite and non-negative: {p}")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"simplex entries sum to {p.sum():.17g}, not 1")
    return p


def load_csv(
    path,
    label_column: str | None = None,
    feature_columns: Sequence[str] | None = None,
    k: int | None = None,
) -> Dataset:
    """Read a headed, comma-delimited numeric CSV into a :class:`Dataset`.

    Every column other than ``label_column`` is a feature unless
    ``feature_columns`` names a subset.  ``k`` defaults to the largest
    observed label (2 when no labels are read).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and not r[0].startswith("#")]
    if not rows:
        raise DataError(f"{path} is empty")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    if not body:
        raise DataError(f"{path} has a header but no data rows")

    if label_column is not None and label_column not in header:
        raise DataError(f"label column {label_column!r} not in {header}")
    if feature_columns is None:
        feature_columns = [h for h in header if h != label_column]
    missing = [c for c in feature_columns if c not in header]
    if missing:
        raise DataError(f"feature columns {missing} not in {header}")
    if not feature_columns:
        raise DataError("no feature columns")
    fidx = [header.index(c) for c in feature_columns]

    x = np.empty((len(body), len(fidx)))
    y = np.empty(len(body), dtype=np.int64) if label_column is not None else None
    lidx = header.index(label_column) if label_column is not None else None
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{i}: expected {len(header)} cells, got {len(row)}")
        try:
            x[i - 2] = [float(row[j]) for j in fidx]
        except ValueError as exc:
            raise DataError(f"{path}:{i}: non-numeric cell ({exc})") from None
        if lidx is not None:
            cell = row[lidx].strip()
            try:
                value = float(cell)
            except ValueError:
                raise DataError(f"{path}:{i}: non-numeric label {cell!r}") from None
            if not value.is_integer():
                raise DataError(f"{path}:{i}: label {cell!r} is not an integer")
            y[i - 2] = int(value)

    if y is not None:
        if np.any(y < 1):
            raise DataError(f"{path}: label out of range (labels must be >= 1)")
        k_obs = int(y.max())
        if k is None:
            k = max(k_obs, 2)
        elif k_obs > k:
            raise DataError(f"{path}: label out of range 1..{k}")
    return Dataset(x, y, k if k is not None else 2, tuple(feature_columns))


def write_csv(path, columns: Sequence[str], rows, comment: str | None = None) -> None:
    """Write a headed CSV; floats use ``repr`` so output round-trips exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if comment:
            fh.write(f"# {comment}\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def dataset_to_csv(path, data: Dataset, label_column: str = "y") -> None:
    cols = list(data.columns or [f"x{j + 1}" for j in range(data.d)])
    rows = data.features.tolist()
    if data.labels is not None:
        cols.append(label_column)
        rows = [r + [int(v)] for r, v in zip(rows, data.labels)]
    write_csv(path, cols, rows)


@dataclass(frozen=True)
class ScalingSpec:
    """Per-column affine map sending the training min to 0 and max to 1."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.mins, dtype=float).ravel()
        hi = np.asarray(self.maxs, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise DataError("mins and maxs differ in length")
        if np.any(hi < lo):
            raise DataError("scaling spec has max < min in some column")
        object.__setattr__(self, "mins", _frozen(lo))
        object.__setattr__(self, "maxs", _frozen(hi))

    @property
    def d(self) -> int:
        return self.mins.size

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise DataError(f"dimension mismatch: data has {x.shape[-1]} columns, spec has {self.d}")
        span = self.maxs - self.mins
        const = span == 0
        z = (x - self.mins) / np.where(const, 1.0, span)
        z = np.where(const, 0.5, z)
        return np.clip(z, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingSpec":
        return cls(np.asarray(d["mins"], dtype=float), np.asarray(d["maxs"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def fit_scaling(data: Dataset) -> ScalingSpec:
    return ScalingSpec(data.features.min(axis=0), data.features.max(axis=0))


def apply_scaling(data: Dataset, spec: ScalingSpec) -> Dataset:
    """Scale ``data`` with ``spec``; constant columns go to 0.5, the rest clamp to [0, 1]."""
    return data.with_features(spec.transform(data.features))


def class_proportions(data: Dataset) -> np.ndarray:
    """Empirical label frequencies as a length-``k`` simplex vector."""
    if data.labels is None:
        raise DataError("class proportions need labels")
    counts = np.bincount(data.labels - 1, minlength=data.k).astype(float)
    return counts / data.n


def split(data: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random partition; the first part holds ``round(fraction * n)`` rows."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if data.n < 2:
        raise DataError("cannot split fewer than two rows")
    m = int(math.floor(fraction * data.n + 0.5))
    m = min(max(m, 1), data.n - 1)
    perm = make_rng(seed, "split").permutation(data.n)
    return data.subset(np.sort(perm[:m])), data.subset(np.sort(perm[m:]))
