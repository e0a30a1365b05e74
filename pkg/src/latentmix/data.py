"""Mixed categorical/real relational datasets with missing entries.

A dataset couples an integer-coded categorical matrix and a real matrix over
the same rows.  Missing cells are tracked in boolean masks; masked cells are
normalized to 0 so a masked value can never leak into a fit.  Either matrix
may be empty (single-modality data).

File formats: one CSV per matrix (header row, one subject per row, shared row
order; empty cell or ``NA`` means missing) plus a JSON sidecar declaring
per-column types and category counts.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .distributions import as_generator

__all__ = [
    "DataError",
    "RelationalDataset",
    "ColumnStandardization",
    "HeldOutCell",
    "load_dataset",
    "save_dataset",
    "standardize_real",
    "hold_out",
    "write_heldout_csv",
    "read_heldout_csv",
]


class DataError(ValueError):
    """Malformed input file or violated dataset invariant."""


@dataclass
class RelationalDataset:
    """Observed categorical matrix, real matrix, and their missing masks.

    ``cat[i, j]`` is an integer code in ``0..q[j]-1`` (0 for missing cells),
    ``real[i, j]`` a float (0.0 for missing cells).  Read-only after
    construction; all mutating operations return new datasets.
    """

    cat: np.ndarray
    q: np.ndarray
    real: np.ndarray
    cat_missing: np.ndarray
    real_missing: np.ndarray
    row_labels: list[str] = field(default_factory=list)
    cat_labels: list[str] = field(default_factory=list)
    real_labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.cat = np.asarray(self.cat, dtype=np.int64)
        self.real = np.asarray(self.real, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.int64)
        self.cat_missing = np.asarray(self.cat_missing, dtype=bool)
        self.real_missing = np.asarray(self.real_missing, dtype=bool)
        if self.cat.ndim != 2 or self.real.ndim != 2:
            raise DataError("cat and real must be 2-d")
        if self.cat.shape[0] != self.real.shape[0]:
            raise DataError(
                f"row mismatch: cat has {self.cat.shape[0]} rows, real has {self.real.shape[0]}"
            )
        if self.cat_missing.shape != self.cat.shape or self.real_missing.shape != self.real.shape:
            raise DataError("missing masks must match matrix shapes")
        if self.q.shape != (self.cat.shape[1],):
            raise DataError("category_counts length must equal number of categorical columns")
        if np.any(self.q < 2):
            bad = int(np.flatnonzero(self.q < 2)[0])
            raise DataError(f"categorical column {bad} declares fewer than 2 categories")
        obs = ~self.cat_missing
        if np.any((self.cat < 0) & obs) or np.any((self.cat >= self.q[None, :]) & obs):
            i, j = np.argwhere(((self.cat < 0) | (self.cat >= self.q[None, :])) & obs)[0]
            raise DataError(
                f"code {self.cat[i, j]} at row {i}, column {j} outside 0..{self.q[j] - 1}"
            )
        # normalize masked cells so held-out values cannot leak
        self.cat = np.where(self.cat_missing, 0, self.cat)
        self.real = np.where(self.real_missing, 0.0, self.real)
        if not self.row_labels:
            self.row_labels = [f"row{i}" for i in range(self.n_rows)]
        if not self.cat_labels:
            self.cat_labels = [f"cat{j}" for j in range(self.m_cat)]
        if not self.real_labels:
            self.real_labels = [f"real{j}" for j in range(self.m_real)]

    @property
    def n_rows(self) -> int:
        return self.cat.shape[0]

    @property
    def m_cat(self) -> int:
        return self.cat.shape[1]

    @property
    def m_real(self) -> int:
        return self.real.shape[1]

    @property
    def n_observed(self) -> int:
        return int((~self.cat_missing).sum() + (~self.real_missing).sum())

    def copy(self) -> "RelationalDataset":
        return RelationalDataset(
            cat=self.cat.copy(),
            q=self.q.copy(),
            real=self.real.copy(),
            cat_missing=self.cat_missing.copy(),
            real_missing=self.real_missing.copy(),
            row_labels=list(self.row_labels),
            cat_labels=list(self.cat_labels),
            real_labels=list(self.real_labels),
        )

    def cat_entity_labels(self) -> list[str]:
        """Labels for the flattened (column, choice) entities of the
        categorical side, attribute-major and choice-minor."""
        out = []
        for j in range(self.m_cat):
            for p in range(1, int(self.q[j])):
                out.append(f"{self.cat_labels[j]}:{p}")
        return out


@dataclass
class HeldOutCell:
    matrix: str  # "cat" or "real"
    row: int
    col: int
    value: float


def _read_matrix_csv(path, kind):
    try:
        frame = pd.read_csv(path, keep_default_na=False, na_values=["", "NA"], dtype=str)
    except Exception as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    labels = [str(c) for c in frame.columns]
    n, m = frame.shape
    missing = frame.isna().to_numpy()
    if kind == "cat":
        values = np.zeros((n, m), dtype=np.int64)
    else:
        values = np.zeros((n, m), dtype=np.float64)
    for j, col in enumerate(frame.columns):
        raw = frame[col].to_numpy()
        for i in range(n):
            if missing[i, j]:
                continue
            text = str(raw[i]).strip()
            if text in ("", "NA"):
                missing[i, j] = True
                continue
            try:
                x = float(text)
            except ValueError as exc:
                raise DataError(
                    f"{path}: row {i}, column '{labels[j]}': cannot parse {text!r}"
                ) from exc
            if kind == "cat":
                if x != int(x):
                    raise DataError(
                        f"{path}: row {i}, column '{labels[j]}': non-integer code {text!r}"
                    )
                values[i, j] = int(x)
            else:
                values[i, j] = x
    return values, missing, labels


def load_dataset(cat_path=None, real_path=None, schema=None) -> RelationalDataset:
    """Load a dataset from CSV files plus an optional JSON schema sidecar.

    ``schema`` may be a path or a dict with an optional ``"q"`` mapping from
    categorical column name to its category count.  Counts absent from the
    schema are inferred as 1 + max observed code; inferred counts are recorded
    via a warning rather than silently.
    """
    if cat_path is None and real_path is None:
        raise DataError("at least one of cat_path/real_path is required")
    if isinstance(schema, (str, Path)):
        with open(schema) as fh:
            schema = json.load(fh)
    schema = schema or {}

    def _load_side(path, kind, dtype):
        if path is None:
            return np.zeros((0, 0), dtype=dtype), np.zeros((0, 0), bool), []
        path = Path(path)
        if not path.exists():
            raise DataError(f"input file not found: {path}")
        if path.stat().st_size == 0:
            return np.zeros((0, 0), dtype=dtype), np.zeros((0, 0), bool), []
        return _read_matrix_csv(path, kind)

    cat, cat_missing, cat_labels = _load_side(cat_path, "cat", np.int64)
    real, real_missing, real_labels = _load_side(real_path, "real", np.float64)

    n = max(cat.shape[0], real.shape[0])
    if cat.shape[1] == 0:
        cat = np.zeros((n, 0), dtype=np.int64)
        cat_missing = np.zeros((n, 0), dtype=bool)
    if real.shape[1] == 0:
        real = np.zeros((n, 0))
        real_missing = np.zeros((n, 0), dtype=bool)

    declared = schema.get("q", {})
    q = np.zeros(cat.shape[1], dtype=np.int64)
    inferred = {}
    for j, name in enumerate(cat_labels):
        if name in declared:
            q[j] = int(declared[name])
        else:
            observed = cat[~cat_missing[:, j], j]
            q[j] = int(observed.max()) + 1 if observed.size else 2
            q[j] = max(q[j], 2)
            inferred[name] = int(q[j])
    if inferred:
        warnings.warn(f"inferred category counts: {inferred}", stacklevel=2)

    return RelationalDataset(
        cat=cat,
        q=q,
        real=real,
        cat_missing=cat_missing,
        real_missing=real_missing,
        cat_labels=cat_labels,
        real_labels=real_labels,
        row_labels=schema.get("row_labels", []),
    )


def save_dataset(ds: RelationalDataset, cat_path, real_path, schema_path=None):
    """Write CSV files (missing cells empty) plus the JSON schema sidecar."""

    def _write(path, values, missing, labels, fmt):
        if values.shape[1] == 0:
            Path(path).write_text("")  # absent modality round-trips as an empty file
            return
        cells = np.where(missing, "", np.char.mod(fmt, values))
        frame = pd.DataFrame(cells, columns=labels)
        frame.to_csv(path, index=False)

    if cat_path is not None:
        _write(cat_path, ds.cat, ds.cat_missing, ds.cat_labels, "%d")
    if real_path is not None:
        _write(real_path, ds.real, ds.real_missing, ds.real_labels, "%.17g")
    if schema_path is not None:
        schema = {
            "version": 1,
            "q": {name: int(ds.q[j]) for j, name in enumerate(ds.cat_labels)},
            "row_labels": list(ds.row_labels),
        }
        with open(schema_path, "w") as fh:
            json.dump(schema, fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class ColumnStandardization:
    """Per-column location/scale applied to the real matrix.

    Uses the population-variance convention (divide by the observed count).
    """

    mean: np.ndarray
    sd: np.ndarray
    applied: bool = True

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.sd

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.sd + self.mean

    def apply_cell(self, col: int, value: float) -> float:
        return (value - self.mean[col]) / self.sd[col]


def standardize_real(ds: RelationalDataset):
    """Return (standardized dataset, ColumnStandardization).

    Means and deviations are computed over observed entries only; a column
    with no variance (or fewer than 2 observed entries) is an error.
    """
    means = np.zeros(ds.m_real)
    sds = np.ones(ds.m_real)
    out = ds.copy()
    for j in range(ds.m_real):
        obs = ~ds.real_missing[:, j]
        values = ds.real[obs, j]
        if values.size < 2:
            raise DataError(f"real column '{ds.real_labels[j]}' has fewer than 2 observed entries")
        mu = values.mean()
        sd = values.std()  # population convention
        if sd <= 0:
            raise DataError(f"real column '{ds.real_labels[j]}' is constant")
        means[j] = mu
        sds[j] = sd
        out.real[obs, j] = (values - mu) / sd
    return out, ColumnStandardization(mean=means, sd=sds)


def hold_out(ds: RelationalDataset, fraction: float, seed):
    """Mask a uniform random fraction of the observed cells.

    Returns ``(train, heldout)`` where ``heldout`` is a list of
    :class:`HeldOutCell` recording the true values.  The count held out is
    ``floor(fraction * n_observed + 0.5)``.  Deterministic given the seed.
    """
    if not 0 < fraction < 1:
        raise DataError(f"hold-out fraction must be in (0, 1), got {fraction}")
    gen = as_generator(seed)
    cat_cells = np.argwhere(~ds.cat_missing)
    real_cells = np.argwhere(~ds.real_missing)
    n_obs = len(cat_cells) + len(real_cells)
    n_hold = int(np.floor(fraction * n_obs + 0.5))
    pick = gen.permutation(n_obs)[:n_hold]
    pick.sort()

    train = ds.copy()
    heldout = []
    for idx in pick:
        if idx < len(cat_cells):
            i, j = map(int, cat_cells[idx])
            heldout.append(HeldOutCell("cat", i, j, float(ds.cat[i, j])))
            train.cat_missing[i, j] = True
            train.cat[i, j] = 0
        else:
            i, j = map(int, real_cells[idx - len(cat_cells)])
            heldout.append(HeldOutCell("real", i, j, float(ds.real[i, j])))
            train.real_missing[i, j] = True
            train.real[i, j] = 0.0

    empty_rows = int(
        np.sum((~train.cat_missing).sum(axis=1) + (~train.real_missing).sum(axis=1) == 0)
    )
    cat_cols = int(np.sum((~train.cat_missing).sum(axis=0) == 0)) if ds.m_cat else 0
    real_cols = int(np.sum((~train.real_missing).sum(axis=0) == 0)) if ds.m_real else 0
    if empty_rows or cat_cols or real_cols:
        warnings.warn(
            f"hold-out left {empty_rows} rows and {cat_cols + real_cols} columns "
            "with no observed entries",
            stacklevel=2,
        )
    return train, heldout


def write_heldout_csv(cells: list[HeldOutCell], path):
    frame = pd.DataFrame(
        {
            "matrix": [c.matrix for c in cells],
            "row": [c.row for c in cells],
            "col": [c.col for c in cells],
            "value": [repr(c.value) for c in cells],
        }
    )
    frame.to_csv(path, index=False)


def read_heldout_csv(path) -> list[HeldOutCell]:
    frame = pd.read_csv(path, float_precision="round_trip")
    return [
        HeldOutCell(str(m), int(i), int(j), float(v))
        for m, i, j, v in zip(frame["matrix"], frame["row"], frame["col"], frame["value"])
    ]
