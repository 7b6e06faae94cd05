"""Two-phase observed-data structures, validation, and CSV ingestion.

The observed unit is one subject: phase-1 variables (w1, a, y) seen on
everyone, a phase-2 membership flag delta, and phase-2 covariates w2 that
exist only when delta=1. A Dataset is a validated, immutable column store
of such records; estimators and the simulation harness all consume it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np

__all__ = [
    "DataError",
    "ObservedRecord",
    "Dataset",
    "CsvSchema",
    "OutcomeScale",
    "default_bounds",
    "scale_outcome",
    "load_csv",
    "write_csv",
]

# Relative margin used when continuous-outcome bounds are derived from data.
BOUNDS_MARGIN = 1e-6


class DataError(ValueError):
    """A dataset or CSV file violates the two-phase data contract."""


@dataclass(frozen=True)
class ObservedRecord:
    """One subject: phase-1 variables, phase-2 flag, optional phase-2 covariates."""

    w1: tuple[float, ...]
    a: int
    y: float
    delta: int
    w2: tuple[float, ...] | None

    def __post_init__(self):
        if self.a not in (0, 1):
            raise DataError(f"treatment must be 0/1, got {self.a!r}")
        if self.delta not in (0, 1):
            raise DataError(f"phase-2 indicator must be 0/1, got {self.delta!r}")
        if self.delta == 0 and self.w2 is not None:
            raise DataError("record with delta=0 must not carry w2")
        if self.delta == 1 and self.w2 is None:
            raise DataError("record with delta=1 must carry w2")


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Immutable column store of two-phase records.

    w2 rows for delta=0 records hold NaN; they are never read by the
    estimation code, which restricts full-data quantities to phase-2 rows.
    Arrays are write-protected so a Dataset can be shared across workers.
    """

    w1: np.ndarray  # (n, d1) float
    a: np.ndarray  # (n,) int
    y: np.ndarray  # (n,) float
    delta: np.ndarray  # (n,) int
    w2: np.ndarray  # (n, d2) float, NaN where delta == 0
    y_kind: str = "binary"
    y_bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        w1 = np.atleast_2d(np.asarray(self.w1, dtype=float))
        a = np.asarray(self.a, dtype=np.int64).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        delta = np.asarray(self.delta, dtype=np.int64).ravel()
        w2 = np.asarray(self.w2, dtype=float)
        if w2.ndim == 1:
            w2 = w2.reshape(len(a), -1)
        n = len(a)
        if not (w1.shape[0] == n == len(y) == len(delta) == w2.shape[0]):
            raise DataError("column lengths disagree")
        if n == 0:
            raise DataError("dataset is empty")
        if not np.all(np.isin(a, (0, 1))):
            raise DataError("treatment column must be binary 0/1")
        if not np.all(np.isin(delta, (0, 1))):
            raise DataError("phase-2 indicator column must be binary 0/1")
        if delta.sum() == 0:
            raise DataError("no phase-2 records: dataset is unusable")
        if not np.all(np.isfinite(w1)):
            raise DataError("w1 contains non-finite values")
        if not np.all(np.isfinite(y)):
            raise DataError("y contains non-finite values")
        p2 = delta == 1
        if w2.shape[1] and not np.all(np.isfinite(w2[p2])):
            raise DataError("w2 missing on a delta=1 record")
        if w2.shape[1] and not np.all(np.isnan(w2[~p2])):
            raise DataError("w2 present on a delta=0 record")
        if self.y_kind == "binary":
            if not np.all(np.isin(y, (0.0, 1.0))):
                raise DataError("binary outcome column must contain only 0/1")
        elif self.y_kind == "continuous":
            lo, hi = self.y_bounds
            if not lo < hi:
                raise DataError(f"invalid outcome bounds ({lo}, {hi})")
            if y.min() < lo or y.max() > hi:
                raise DataError("outcome outside declared bounds")
        else:
            raise DataError(f"unknown y_kind {self.y_kind!r}")
        object.__setattr__(self, "w1", _frozen(w1))
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "delta", _frozen(delta))
        object.__setattr__(self, "w2", _frozen(w2))
        object.__setattr__(self, "y_bounds", (float(self.y_bounds[0]), float(self.y_bounds[1])))

    # -- basic views -------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.a)

    @property
    def d_w1(self) -> int:
        return self.w1.shape[1]

    @property
    def d_w2(self) -> int:
        return self.w2.shape[1]

    @property
    def phase2(self) -> np.ndarray:
        """Indices of delta=1 records, in dataset order."""
        return np.flatnonzero(self.delta == 1)

    @property
    def n_phase2(self) -> int:
        return int(self.delta.sum())

    @property
    def records(self) -> list[ObservedRecord]:
        out = []
        for i in range(self.n):
            w2 = tuple(self.w2[i]) if self.delta[i] == 1 else None
            if self.d_w2 == 0:
                w2 = () if self.delta[i] == 1 else None
            out.append(
                ObservedRecord(
                    w1=tuple(self.w1[i]),
                    a=int(self.a[i]),
                    y=float(self.y[i]),
                    delta=int(self.delta[i]),
                    w2=w2,
                )
            )
        return out

    @classmethod
    def from_records(
        cls,
        records: Iterable[ObservedRecord],
        y_kind: str = "binary",
        y_bounds: tuple[float, float] | None = None,
    ) -> "Dataset":
        recs = list(records)
        if not recs:
            raise DataError("dataset is empty")
        d1 = len(recs[0].w1)
        d2 = None
        for r in recs:
            if len(r.w1) != d1:
                raise DataError("records disagree on w1 dimension")
            if r.delta == 1:
                if d2 is None:
                    d2 = len(r.w2)
                elif len(r.w2) != d2:
                    raise DataError("records disagree on w2 dimension")
        d2 = 0 if d2 is None else d2
        n = len(recs)
        w1 = np.array([r.w1 for r in recs], dtype=float).reshape(n, d1)
        a = np.array([r.a for r in recs])
        y = np.array([r.y for r in recs], dtype=float)
        delta = np.array([r.delta for r in recs])
        w2 = np.full((n, d2), np.nan)
        for i, r in enumerate(recs):
            if r.delta == 1 and d2:
                w2[i] = r.w2
        if y_kind == "continuous" and y_bounds is None:
            y_bounds = default_bounds(y)
        return cls(w1=w1, a=a, y=y, delta=delta, w2=w2, y_kind=y_kind,
                   y_bounds=y_bounds if y_bounds is not None else (0.0, 1.0))

    def replace_y(self, y: np.ndarray, y_kind: str, y_bounds: tuple[float, float]) -> "Dataset":
        return Dataset(w1=self.w1, a=self.a, y=y, delta=self.delta, w2=self.w2,
                       y_kind=y_kind, y_bounds=y_bounds)


def default_bounds(y: np.ndarray) -> tuple[float, float]:
    """Data-driven bounds for a continuous outcome: range plus a small margin."""
    lo, hi = float(np.min(y)), float(np.max(y))
    span = hi - lo
    if span == 0.0:
        span = max(1.0, abs(lo))
    pad = BOUNDS_MARGIN * span
    return lo - pad, hi + pad


@dataclass(frozen=True)
class OutcomeScale:
    """Affine map between the raw outcome range and [0, 1]."""

    lo: float
    hi: float

    @property
    def span(self) -> float:
        return self.hi - self.lo

    def apply(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.lo) / self.span

    def invert(self, y_scaled: np.ndarray) -> np.ndarray:
        return np.asarray(y_scaled, dtype=float) * self.span + self.lo


IDENTITY_SCALE = OutcomeScale(0.0, 1.0)


def scale_outcome(ds: Dataset) -> tuple[Dataset, OutcomeScale]:
    """Map a continuous outcome onto [0, 1]; binary datasets pass through.

    Returns the transformed dataset and the scale needed to put estimates
    back on the raw outcome scale.
    """
    if ds.y_kind == "binary":
        return ds, IDENTITY_SCALE
    lo, hi = ds.y_bounds
    scale = OutcomeScale(lo, hi)
    y_scaled = scale.apply(ds.y)
    # guard against float dust outside [0, 1]
    y_scaled = np.clip(y_scaled, 0.0, 1.0)
    return ds.replace_y(y_scaled, "continuous", (0.0, 1.0)), scale


# ---------------------------------------------------------------------------
# CSV interface
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    """Column-role map for CSV files: names of the treatment, outcome and
    phase-2 indicator columns, plus ordered w1/w2 column groups."""

    treatment: str
    outcome: str
    delta: str
    w1: tuple[str, ...]
    w2: tuple[str, ...] = ()
    y_kind: str = "binary"
    y_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.w1:
            raise DataError("schema needs at least one w1 column")
        names = [self.treatment, self.outcome, self.delta, *self.w1, *self.w2]
        if len(set(names)) != len(names):
            raise DataError("schema assigns one column to several roles")
        object.__setattr__(self, "w1", tuple(self.w1))
        object.__setattr__(self, "w2", tuple(self.w2))

    @property
    def columns(self) -> tuple[str, ...]:
        """Canonical column order used by write_csv."""
        return (*self.w1, *self.w2, self.treatment, self.outcome, self.delta)


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"row {row}: cannot parse {col}={cell!r} as a number") from None


def _parse_binary(cell: str, row: int, col: str) -> int:
    v = _parse_float(cell, row, col)
    if v not in (0.0, 1.0):
        raise DataError(f"row {row}: column {col} must be 0/1, got {cell!r}")
    return int(v)


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read a two-phase dataset from a headed CSV file.

    Missing phase-2 values must be empty cells. A delta=0 row with a filled
    w2 cell is rejected: over-observation signals a schema mistake, not data.
    Row numbers in error messages are 1-based data rows (header excluded).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty CSV file") from None
        col_idx = {name: i for i, name in enumerate(header)}
        for name in schema.columns:
            if name not in col_idx:
                raise DataError(f"CSV is missing required column {name!r}")
        w1_rows, w2_rows, a_col, y_col, d_col = [], [], [], [], []
        for rownum, cells in enumerate(reader, start=1):
            if len(cells) != len(header):
                raise DataError(f"row {rownum}: expected {len(header)} cells, got {len(cells)}")

            def cell(name: str) -> str:
                return cells[col_idx[name]].strip()

            delta = _parse_binary(cell(schema.delta), rownum, schema.delta)
            a = _parse_binary(cell(schema.treatment), rownum, schema.treatment)
            y = _parse_float(cell(schema.outcome), rownum, schema.outcome)
            w1 = []
            for name in schema.w1:
                c = cell(name)
                if c == "":
                    raise DataError(f"row {rownum}: phase-1 column {name} is empty")
                w1.append(_parse_float(c, rownum, name))
            w2 = []
            for name in schema.w2:
                c = cell(name)
                if delta == 1:
                    if c == "":
                        raise DataError(f"row {rownum}: delta=1 but {name} is missing")
                    w2.append(_parse_float(c, rownum, name))
                else:
                    if c != "":
                        raise DataError(
                            f"row {rownum}: delta=0 row has a value in phase-2 column {name}"
                        )
                    w2.append(np.nan)
            w1_rows.append(w1)
            w2_rows.append(w2)
            a_col.append(a)
            y_col.append(y)
            d_col.append(delta)
    if not a_col:
        raise DataError("CSV contains a header but no data rows")
    y_arr = np.array(y_col, dtype=float)
    y_bounds = schema.y_bounds
    if schema.y_kind == "continuous" and y_bounds is None:
        y_bounds = default_bounds(y_arr)
    return Dataset(
        w1=np.array(w1_rows, dtype=float).reshape(len(a_col), len(schema.w1)),
        a=np.array(a_col),
        y=y_arr,
        delta=np.array(d_col),
        w2=np.array(w2_rows, dtype=float).reshape(len(a_col), len(schema.w2)),
        y_kind=schema.y_kind,
        y_bounds=y_bounds if y_bounds is not None else (0.0, 1.0),
    )


def _fmt(x: float) -> str:
    # 17 significant digits round-trips IEEE doubles exactly
    return format(float(x), ".17g")


def write_csv(ds: Dataset, path, schema: CsvSchema) -> None:
    """Write a dataset using the schema's column order; inverse of load_csv."""
    if len(schema.w1) != ds.d_w1 or len(schema.w2) != ds.d_w2:
        raise DataError("schema dimensions do not match dataset")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(schema.columns)
        for i in range(ds.n):
            row = [_fmt(v) for v in ds.w1[i]]
            if ds.delta[i] == 1:
                row += [_fmt(v) for v in ds.w2[i]]
            else:
                row += [""] * ds.d_w2
            row += [str(int(ds.a[i])), _fmt(ds.y[i]), str(int(ds.delta[i]))]
            writer.writerow(row)
