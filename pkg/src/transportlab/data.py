"""Tabular datasets: loading, validation, imputation, partitioning and folds.

Cells are stored in a float matrix with ``NaN`` marking a missing value.
Categorical cells hold the integer index of their category.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MISSING_TOKENS = ("", "NA")


class DataError(ValueError):
    """Raised for malformed input data."""


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str = "numeric"
    categories: tuple[str, ...] = ()
    ordered: bool = False

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "categories", tuple(self.categories))
        if self.kind == "categorical":
            if not self.categories:
                raise DataError(f"column {self.name!r}: categorical column needs categories")
            if len(set(self.categories)) != len(self.categories):
                raise DataError(f"column {self.name!r}: duplicate categories")

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable covariate grid with optional outcome and membership indicator.

    ``membership`` is 1 for source rows and 0 for target rows.
    """

    schema: tuple[ColumnSchema, ...]
    rows: np.ndarray
    membership: np.ndarray
    row_ids: tuple[str, ...]
    outcome: np.ndarray | None = None
    outcome_name: str = "y"

    def __post_init__(self):
        schema = tuple(self.schema)
        names = [c.name for c in schema]
        if len(set(names)) != len(names):
            raise DataError("column names must be unique")
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != len(schema):
            raise DataError(f"rows must be n x {len(schema)}")
        n = rows.shape[0]
        membership = np.asarray(self.membership, dtype=np.int8)
        if membership.shape != (n,):
            raise DataError("membership length must equal row count")
        if not np.isin(membership, (0, 1)).all():
            raise DataError("membership must be 0 or 1")
        row_ids = tuple(str(r) for r in self.row_ids)
        if len(row_ids) != n:
            raise DataError("row_ids length must equal row count")
        if len(set(row_ids)) != n:
            raise DataError("duplicate row_ids")
        for j, col in enumerate(schema):
            x = rows[:, j]
            if np.isinf(x).any():
                raise DataError(f"column {col.name!r}: non-finite value")
            if col.is_categorical:
                ok = np.isnan(x) | ((x >= 0) & (x < len(col.categories)) & (x == np.floor(x)))
                if not ok.all():
                    raise DataError(f"column {col.name!r}: invalid category index")
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "rows", _freeze(rows))
        object.__setattr__(self, "membership", _freeze(membership))
        object.__setattr__(self, "row_ids", row_ids)
        if self.outcome is not None:
            y = np.asarray(self.outcome, dtype=float)
            if y.shape != (n,):
                raise DataError("outcome length must equal row count")
            if np.isinf(y).any():
                raise DataError("outcome must be finite or missing")
            object.__setattr__(self, "outcome", _freeze(y))

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.schema]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.names.index(name)]

    def take(self, idx, *, drop_outcome: bool = False) -> "Dataset":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        outcome = None if (drop_outcome or self.outcome is None) else self.outcome[idx]
        return Dataset(
            schema=self.schema,
            rows=self.rows[idx],
            membership=self.membership[idx],
            row_ids=tuple(self.row_ids[i] for i in idx),
            outcome=outcome,
            outcome_name=self.outcome_name,
        )

    def select(self, names: Sequence[str]) -> "Dataset":
        """Restrict to a subset of covariate columns."""
        missing = [n for n in names if n not in self.names]
        if missing:
            raise DataError(f"unknown columns: {', '.join(missing)}")
        cols = [self.names.index(n) for n in names]
        return Dataset(
            schema=tuple(self.schema[j] for j in cols),
            rows=self.rows[:, cols],
            membership=self.membership,
            row_ids=self.row_ids,
            outcome=self.outcome,
            outcome_name=self.outcome_name,
        )

    def with_outcome(self, y) -> "Dataset":
        return Dataset(self.schema, self.rows, self.membership, self.row_ids, y, self.outcome_name)

    def labeled_outcome(self) -> np.ndarray:
        """Outcome vector, raising if any entry is missing."""
        if self.outcome is None:
            raise DataError("dataset has no outcome column")
        if np.isnan(self.outcome).any():
            bad = [self.row_ids[i] for i in np.flatnonzero(np.isnan(self.outcome))[:5]]
            raise DataError(f"outcome missing for rows {', '.join(bad)}")
        return np.asarray(self.outcome)


def concat(parts: Iterable[Dataset]) -> Dataset:
    parts = list(parts)
    schema = parts[0].schema
    if any(p.schema != schema for p in parts):
        raise DataError("cannot concatenate datasets with different schemas")
    if all(p.outcome is None for p in parts):
        outcome = None
    else:
        outcome = np.concatenate(
            [p.outcome if p.outcome is not None else np.full(p.n, np.nan) for p in parts]
        )
    return Dataset(
        schema=schema,
        rows=np.vstack([p.rows for p in parts]),
        membership=np.concatenate([p.membership for p in parts]),
        row_ids=tuple(r for p in parts for r in p.row_ids),
        outcome=outcome,
        outcome_name=parts[0].outcome_name,
    )


def _parse_float(tok: str, what: str, line: int) -> float:
    if tok in MISSING_TOKENS:
        return math.nan
    try:
        v = float(tok)
    except ValueError:
        raise DataError(f"line {line}: non-numeric token {tok!r} in numeric column {what!r}") from None
    if not math.isfinite(v):
        raise DataError(f"line {line}: non-finite value in column {what!r}")
    return v


def load_csv(
    path,
    schema: Sequence[ColumnSchema],
    outcome_col: str | None = None,
    membership_col: str | None = None,
    id_col: str | None = None,
) -> Dataset:
    """Read a CSV file into a :class:`Dataset`.

    Empty cells and the literal ``NA`` are missing. Lines starting with ``#``
    are comments. Columns in the file that are not referenced are ignored.
    Without ``id_col`` the row ids are the 0-based data row positions.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate header names")
    pos = {h: i for i, h in enumerate(header)}
    wanted = [c.name for c in schema] + [c for c in (outcome_col, membership_col, id_col) if c]
    for name in wanted:
        if name not in pos:
            raise DataError(f"{path}: column {name!r} missing from header")

    cells, outcome, membership, ids = [], [], [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise DataError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(rec)}")
        row = []
        for col in schema:
            tok = rec[pos[col.name]].strip()
            if col.is_categorical:
                if tok in MISSING_TOKENS:
                    row.append(math.nan)
                elif tok in col.categories:
                    row.append(float(col.categories.index(tok)))
                else:
                    raise DataError(f"{path}: line {lineno}: unknown category {tok!r} in column {col.name!r}")
            else:
                row.append(_parse_float(tok, col.name, lineno))
        cells.append(row)
        if outcome_col:
            outcome.append(_parse_float(rec[pos[outcome_col]].strip(), outcome_col, lineno))
        if membership_col:
            tok = rec[pos[membership_col]].strip()
            if tok not in ("0", "1"):
                raise DataError(f"{path}: line {lineno}: membership must be 0 or 1, got {tok!r}")
            membership.append(int(tok))
        if id_col:
            ids.append(rec[pos[id_col]].strip())

    n = len(cells)
    if not id_col:
        ids = [str(i) for i in range(n)]
    elif len(set(ids)) != n:
        raise DataError(f"{path}: duplicate row_ids")
    return Dataset(
        schema=tuple(schema),
        rows=np.array(cells, dtype=float).reshape(n, len(schema)),
        membership=np.array(membership if membership_col else [1] * n, dtype=np.int8),
        row_ids=tuple(ids),
        outcome=np.array(outcome, dtype=float) if outcome_col else None,
        outcome_name=outcome_col or "y",
    )


def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    return repr(float(v))


def write_csv(
    d: Dataset,
    path,
    *,
    membership_col: str | None = "S",
    id_col: str = "row_id",
    include_outcome: bool = True,
    comment: str | None = None,
) -> None:
    """Write ``d`` in the format :func:`load_csv` reads."""
    header = [id_col] + d.names
    if include_outcome and d.outcome is not None:
        header.append(d.outcome_name)
    if membership_col:
        header.append(membership_col)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(d.n):
            rec = [d.row_ids[i]]
            for j, col in enumerate(d.schema):
                v = d.rows[i, j]
                if col.is_categorical:
                    rec.append("" if math.isnan(v) else col.categories[int(v)])
                else:
                    rec.append(_fmt(v))
            if include_outcome and d.outcome is not None:
                rec.append(_fmt(d.outcome[i]))
            if membership_col:
                rec.append(str(int(d.membership[i])))
            w.writerow(rec)


def impute(d: Dataset, policy: str = "mean_mode", value: float | None = None) -> Dataset:
    """Fill missing covariate cells.

    ``mean_mode`` uses the column mean (numeric) or the modal category,
    lowest index on ties, computed over all rows of ``d``. ``constant`` fills
    every missing cell with ``value``; for categorical columns ``value`` is a
    category index. The outcome is never imputed.
    """
    rows = np.array(d.rows, copy=True)
    for j, col in enumerate(d.schema):
        x = rows[:, j]
        miss = np.isnan(x)
        if not miss.any():
            continue
        if policy == "constant":
            if value is None:
                raise ValueError("constant imputation needs a value")
            fill = float(value)
            if col.is_categorical and not (0 <= fill < len(col.categories) and fill == int(fill)):
                raise DataError(f"column {col.name!r}: constant {value!r} is not a category index")
        elif policy == "mean_mode":
            if miss.all():
                raise DataError(f"column {col.name!r}: all values missing, cannot impute")
            if col.is_categorical:
                counts = np.bincount(x[~miss].astype(int), minlength=len(col.categories))
                fill = float(np.argmax(counts))
            else:
                fill = float(x[~miss].mean())
        else:
            raise ValueError(f"unknown imputation policy {policy!r}")
        x[miss] = fill
    return Dataset(d.schema, rows, d.membership, d.row_ids, d.outcome, d.outcome_name)


def split_by_membership(d: Dataset) -> tuple[Dataset, Dataset]:
    """Partition into (source, target); the target part drops its outcome."""
    src = d.membership == 1
    if not src.any():
        raise DataError("empty source")
    if src.all():
        raise DataError("empty target")
    return d.take(src), d.take(~src, drop_outcome=True)


@dataclass(frozen=True)
class FoldAssignment:
    n: int
    k: int
    assignment: np.ndarray = field(repr=False)

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def kfold(n: int, k: int, seed: int) -> FoldAssignment:
    """Random balanced assignment of ``n`` rows to ``k`` folds."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % k
    return FoldAssignment(n, k, _freeze(assignment))


def design_matrix(d: Dataset) -> tuple[np.ndarray, list[str]]:
    """Numeric model matrix for ``d``.

    Unordered categorical columns become indicator columns for every category
    except the first; ordered ones keep their integer codes. Missing cells
    must have been imputed.
    """
    if np.isnan(d.rows).any():
        raise DataError("design matrix requires imputed covariates")
    blocks, names = [], []
    for j, col in enumerate(d.schema):
        x = d.rows[:, j]
        if col.is_categorical and not col.ordered:
            for c in range(1, len(col.categories)):
                blocks.append((x == c).astype(float))
                names.append(f"{col.name}={col.categories[c]}")
        else:
            blocks.append(x)
            names.append(col.name)
    X = np.column_stack(blocks) if blocks else np.empty((d.n, 0))
    return X, names
