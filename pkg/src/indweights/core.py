"""Data model, validation and CSV ingestion.

Everything downstream works on three immutable containers:

* :class:`Dataset` -- covariates ``X`` (n x p), exposure ``A`` and an optional
  outcome ``Y``.
* :class:`WeightVector` -- nonnegative unit weights summing to ``n``.
* :class:`DistanceStructures` -- pairwise distance matrices of ``X`` and ``A``
  together with their doubly-centered versions.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform


class DataError(ValueError):
    """Raised when input data violates a validation rule."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Covariates, exposure and (optionally) outcome for ``n`` units."""

    covariates: np.ndarray
    exposure: np.ndarray
    outcome: Optional[np.ndarray] = None
    column_names: tuple = ()

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise DataError("covariates must be a 2-d array")
        n, p = x.shape
        if n < 2:
            raise DataError(f"need at least 2 units, got {n}")
        if p < 1:
            raise DataError("need at least one covariate column")
        a = np.asarray(self.exposure, dtype=float).ravel()
        if a.shape[0] != n:
            raise DataError(f"exposure has {a.shape[0]} entries, expected {n}")
        for name, arr in (("covariates", x), ("exposure", a)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contain non-finite values")
        y = None
        if self.outcome is not None:
            y = np.asarray(self.outcome, dtype=float).ravel()
            if y.shape[0] != n:
                raise DataError(f"outcome has {y.shape[0]} entries, expected {n}")
            if not np.all(np.isfinite(y)):
                raise DataError("outcome contains non-finite values")
        names = tuple(self.column_names) or tuple(f"x{j + 1}" for j in range(p))
        if len(names) != p:
            raise DataError(f"{len(names)} column names for {p} covariate columns")
        object.__setattr__(self, "covariates", _frozen(x))
        object.__setattr__(self, "exposure", _frozen(a))
        object.__setattr__(self, "outcome", None if y is None else _frozen(y))
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def require_outcome(self) -> np.ndarray:
        if self.outcome is None:
            raise DataError("this operation needs an outcome column")
        return self.outcome

    def subset(self, index) -> "Dataset":
        """Rows ``index`` (any fancy index, repeats allowed) as a new dataset."""
        index = np.asarray(index)
        y = None if self.outcome is None else self.outcome[index]
        return Dataset(self.covariates[index], self.exposure[index], y, self.column_names)

    def standardized(self) -> "Dataset":
        """Copy with every non-constant covariate column scaled to unit variance."""
        sd = self.covariates.std(axis=0, ddof=1)
        sd = np.where(sd > 0, sd, 1.0)
        return Dataset(self.covariates / sd, self.exposure, self.outcome, self.column_names)

    def to_csv(self, exposure_col: str = "a", outcome_col: str = "y") -> str:
        """Canonical CSV text (17 significant digits)."""
        header = [exposure_col] + ([outcome_col] if self.outcome is not None else [])
        header += list(self.column_names)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for i in range(self.n):
            row = [self.exposure[i]]
            if self.outcome is not None:
                row.append(self.outcome[i])
            row.extend(self.covariates[i])
            writer.writerow([format_float(v) for v in row])
        return buf.getvalue()


def format_float(v: float) -> str:
    return f"{float(v):.17g}"


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative weights that sum to ``n``."""

    values: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        w = np.asarray(self.values, dtype=float).ravel()
        n = w.shape[0]
        if n == 0 or not np.all(np.isfinite(w)):
            raise DataError("weights must be a non-empty finite vector")
        if np.any(w < 0):
            raise DataError(f"weights must be nonnegative (min {w.min():.3g})")
        if abs(w.sum() - n) > 1e-6 * n:
            raise DataError(f"weights sum to {w.sum():.10g}, expected {n}")
        object.__setattr__(self, "values", _frozen(w))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @classmethod
    def uniform(cls, n: int) -> "WeightVector":
        return cls(np.ones(n), "uniform")

    @classmethod
    def normalized(cls, values, label: str = "custom") -> "WeightVector":
        """Rescale arbitrary nonnegative values so they sum to ``n``."""
        v = np.asarray(values, dtype=float).ravel()
        total = v.sum()
        if not total > 0:
            raise DataError("cannot normalize weights with nonpositive total")
        return cls(v * (v.shape[0] / total), label)

    def to_csv(self) -> str:
        return "weight\n" + "".join(format_float(v) + "\n" for v in self.values)

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path, label: Optional[str] = None) -> "WeightVector":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["weight"]:
            raise DataError(f"{path}: expected a single 'weight' column")
        try:
            vals = [float(r[0]) for r in rows[1:] if r]
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
        return cls(np.array(vals), label or Path(path).stem)


def as_weights(w, n: Optional[int] = None) -> np.ndarray:
    """Plain array view of a :class:`WeightVector` or array-like."""
    values = w.values if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    if n is not None and values.shape[0] != n:
        raise DataError(f"weight vector has length {values.shape[0]}, expected {n}")
    return values


@dataclass(frozen=True)
class DistanceStructures:
    """Pairwise distances of covariates/exposure plus their doubly-centered forms."""

    dist_x: np.ndarray
    dist_a: np.ndarray
    centered_x: np.ndarray
    centered_a: np.ndarray
    p: int = field(default=1)

    @property
    def n(self) -> int:
        return self.dist_x.shape[0]


def double_center(m) -> np.ndarray:
    """Subtract row and column means and add back the grand mean."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"double_center needs a square matrix, got shape {m.shape}")
    row = m.mean(axis=1, keepdims=True)
    col = m.mean(axis=0, keepdims=True)
    return m - row - col + m.mean()


def pairwise_distances(dataset: Dataset) -> DistanceStructures:
    """Euclidean distances between covariate rows and absolute exposure gaps.

    The doubly-centered matrices are filled in as well since every consumer
    needs them and they are cheap relative to the distances.
    """
    dx = squareform(pdist(dataset.covariates, metric="euclidean"))
    da = np.abs(dataset.exposure[:, None] - dataset.exposure[None, :])
    return DistanceStructures(
        dist_x=_frozen(dx),
        dist_a=_frozen(da),
        centered_x=_frozen(double_center(dx)),
        centered_a=_frozen(double_center(da)),
        p=dataset.p,
    )


def _parse_cell(text: str):
    try:
        return float(text)
    except ValueError:
        return None


def load_dataset(
    path,
    exposure_col: str,
    outcome_col: Optional[str] = None,
    covariate_cols: Optional[Sequence[str]] = None,
) -> Dataset:
    """Read a header-bearing CSV into a :class:`Dataset`.

    Covariates default to every column other than the exposure and outcome.
    A column in which no cell parses as a number is treated as categorical and
    expanded into 0/1 indicators, dropping the lexicographically first level.
    Missing, unparseable or non-finite numeric cells are rejected with their
    location.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"{path}: data row {i + 1} has {len(r)} fields, header has {len(header)}")
    index = {name: j for j, name in enumerate(header)}
    wanted = [exposure_col] + ([outcome_col] if outcome_col else [])
    if covariate_cols is not None:
        wanted += list(covariate_cols)
    for name in wanted:
        if name not in index:
            raise DataError(f"{path}: missing column {name!r}")
    if covariate_cols is None:
        covariate_cols = [h for h in header if h not in (exposure_col, outcome_col)]
    if not covariate_cols:
        raise DataError(f"{path}: no covariate columns")

    def column(name: str, numeric_only: bool):
        j = index[name]
        cells = [r[j].strip() for r in body]
        parsed = [_parse_cell(c) for c in cells]
        if not numeric_only and all(v is None for v in parsed) and all(cells):
            return None, cells
        for i, (c, v) in enumerate(zip(cells, parsed)):
            if v is None:
                what = "missing" if c == "" else f"unparseable ({c!r})"
                raise DataError(f"{path}: {what} cell at data row {i + 1}, column {name!r}")
            if not math.isfinite(v):
                raise DataError(f"{path}: non-finite cell ({c!r}) at data row {i + 1}, column {name!r}")
        return np.array(parsed, dtype=float), None

    a, _ = column(exposure_col, True)
    y = column(outcome_col, True)[0] if outcome_col else None
    blocks, names = [], []
    for name in covariate_cols:
        values, labels = column(name, False)
        if values is not None:
            blocks.append(values[:, None])
            names.append(name)
            continue
        levels = sorted(set(labels))
        for level in levels[1:]:
            blocks.append(np.array([1.0 if c == level else 0.0 for c in labels])[:, None])
            names.append(f"{name}={level}")
    if not blocks:
        raise DataError(f"{path}: categorical covariates have a single level only")
    return Dataset(np.hstack(blocks), a, y, tuple(names))
