"""Tabular data ingestion, encoding and seeded subsampling.

The pipeline is: load a CSV with declared column kinds, fit the encoder
(standardisation for numerics, one-hot for categoricals) on the first
half of the rows, encode everything, split positionally in half, and
draw seeded training subsamples of proportion p per run.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .seeding import MASK64

NUMERIC = "numeric"
CATEGORICAL = "categorical"
LABEL = "label"

__all__ = [
    "NUMERIC",
    "CATEGORICAL",
    "LABEL",
    "Column",
    "TabularDataset",
    "EncodedDataset",
    "SplitDataset",
    "load_csv",
    "preprocess",
    "split_half",
    "subsample",
    "train_row_count",
]


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # numeric | categorical | label


@dataclass(frozen=True)
class TabularDataset:
    """Raw rows with declared column kinds; missing cells are None.

    The label column holds ints already mapped to {0, 1}.
    """

    columns: tuple
    rows: tuple

    def __post_init__(self):
        label_cols = [i for i, c in enumerate(self.columns) if c.kind == LABEL]
        if len(label_cols) != 1:
            raise DataError("dataset must have exactly one label column")
        if len(self.rows) < 2:
            raise DataError("dataset must contain at least 2 rows")
        width = len(self.columns)
        for r, row in enumerate(self.rows):
            if len(row) != width:
                raise DataError(f"row {r} has {len(row)} values, expected {width}")
            label = row[label_cols[0]]
            if label not in (0, 1):
                raise DataError(f"row {r} label {label!r} is not 0/1")

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def label_index(self) -> int:
        return next(i for i, c in enumerate(self.columns) if c.kind == LABEL)

    def column_names(self) -> tuple:
        return tuple(c.name for c in self.columns)


@dataclass(frozen=True)
class EncodedDataset:
    """Fully numeric design matrix plus binary labels."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ValueError("labels must be a vector matching the feature rows")
        if features.shape[1] != len(self.feature_names):
            raise ValueError("feature_names length must match feature columns")
        if features.size and not np.all(np.isfinite(features)):
            raise ValueError("encoded features must be finite (no NaN/inf)")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "EncodedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return EncodedDataset(self.features[idx], self.labels[idx], self.feature_names)


@dataclass(frozen=True)
class SplitDataset:
    train: EncodedDataset
    validation: EncodedDataset


def train_row_count(n_rows: int) -> int:
    """Size of the training half: ceil(n/2), the extra row goes to training."""
    return (n_rows + 1) // 2


def load_csv(path, label_column: str, categorical_columns=(), positive_label=None) -> TabularDataset:
    """Read a comma-separated file with a header row into a TabularDataset.

    Columns not declared categorical (and not the label) are numeric.
    Empty cells are missing values. The label must take exactly two
    distinct values; the lexicographically larger one maps to 1 unless
    ``positive_label`` overrides it.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    categorical = set(categorical_columns)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        if label_column not in header:
            raise DataError(f"label column {label_column!r} not found in header {header}")
        unknown = categorical - set(header)
        if unknown:
            raise DataError(f"categorical columns not in header: {sorted(unknown)}")
        if label_column in categorical:
            raise DataError(f"label column {label_column!r} cannot also be categorical")

        kinds = []
        for name in header:
            if name == label_column:
                kinds.append(LABEL)
            elif name in categorical:
                kinds.append(CATEGORICAL)
            else:
                kinds.append(NUMERIC)
        label_idx = header.index(label_column)

        raw_rows = []
        raw_labels = []
        for line_no, record in enumerate(reader, start=2):
            if len(record) != len(header):
                raise DataError(
                    f"ragged row at line {line_no}: {len(record)} fields, expected {len(header)}"
                )
            row = []
            for j, cell in enumerate(record):
                cell = cell.strip()
                if kinds[j] == LABEL:
                    if cell == "":
                        raise DataError(f"missing label at line {line_no}")
                    raw_labels.append(cell)
                    row.append(cell)  # remapped below
                elif cell == "":
                    row.append(None)
                elif kinds[j] == CATEGORICAL:
                    row.append(cell)
                else:
                    try:
                        row.append(float(cell))
                    except ValueError:
                        raise DataError(
                            f"non-numeric value {cell!r} in column {header[j]!r} at line {line_no}"
                        ) from None
            raw_rows.append(row)

    distinct = sorted(set(raw_labels))
    if len(distinct) != 2:
        raise DataError(f"non-binary label: found {len(distinct)} distinct value(s) {distinct[:5]}")
    if positive_label is not None:
        if positive_label not in distinct:
            raise DataError(f"positive label {positive_label!r} not among label values {distinct}")
        positive = positive_label
    else:
        positive = distinct[1]  # lexicographically larger

    rows = []
    for row in raw_rows:
        row = list(row)
        row[label_idx] = 1 if row[label_idx] == positive else 0
        rows.append(tuple(row))

    columns = tuple(Column(name, kind) for name, kind in zip(header, kinds))
    return TabularDataset(columns=columns, rows=tuple(rows))


def _fit_indices(fit_on, n_rows: int) -> np.ndarray:
    idx = np.asarray(list(fit_on) if isinstance(fit_on, range) else fit_on, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("fit_on must be a non-empty range of row indices")
    if idx.min() < 0 or idx.max() >= n_rows:
        raise ValueError("fit_on indices out of bounds")
    return idx


def preprocess(data: TabularDataset, fit_on) -> EncodedDataset:
    """Encode all rows using statistics computed on ``fit_on`` rows only.

    Numeric columns are standardised with the fit rows' mean and
    (population) standard deviation; constant columns encode as zeros.
    Missing numerics impute to the fit mean, i.e. 0 after standardising.
    Categoricals expand to one indicator per value seen in the fit rows;
    unseen or missing values encode as all-zero indicators.
    """
    fit_idx = _fit_indices(fit_on, data.n_rows)
    n = data.n_rows
    blocks = []
    names = []
    for j, col in enumerate(data.columns):
        if col.kind == LABEL:
            continue
        values = [row[j] for row in data.rows]
        if col.kind == NUMERIC:
            arr = np.array([np.nan if v is None else float(v) for v in values], dtype=np.float64)
            fit_vals = arr[fit_idx]
            fit_vals = fit_vals[np.isfinite(fit_vals)]
            if fit_vals.size == 0:
                mean, std = 0.0, 0.0
            else:
                mean = float(fit_vals.mean())
                std = float(fit_vals.std(ddof=0))
            if std < 1e-12:
                encoded = np.zeros(n, dtype=np.float64)
            else:
                encoded = (arr - mean) / std
                encoded[~np.isfinite(encoded)] = 0.0  # missing -> fit mean -> 0
            blocks.append(encoded[:, None])
            names.append(col.name)
        else:
            seen = sorted({values[i] for i in fit_idx if values[i] is not None})
            for category in seen:
                indicator = np.fromiter(
                    (1.0 if v == category else 0.0 for v in values), dtype=np.float64, count=n
                )
                blocks.append(indicator[:, None])
                names.append(f"{col.name}={category}")
    label_idx = data.label_index
    labels = np.array([row[label_idx] for row in data.rows], dtype=np.int64)
    features = np.hstack(blocks) if blocks else np.zeros((n, 0), dtype=np.float64)
    return EncodedDataset(features=features, labels=labels, feature_names=tuple(names))


def split_half(data: EncodedDataset) -> SplitDataset:
    """Positional half split: first ceil(N/2) rows train, the rest validate."""
    n = data.n_rows
    if n < 2:
        raise DataError("cannot split a dataset with fewer than 2 rows")
    cut = train_row_count(n)
    return SplitDataset(
        train=data.take(np.arange(cut)),
        validation=data.take(np.arange(cut, n)),
    )


def subsample(data: EncodedDataset, p: float, seed: int) -> EncodedDataset:
    """Draw floor(p*N) rows uniformly without replacement, seeded by ``seed``.

    p = 1.0 returns the dataset unchanged; smaller p keeps the selected
    rows in their original order.
    """
    if not (0.0 < p <= 1.0):
        raise ValueError(f"subsample proportion must be in (0, 1], got {p}")
    n = data.n_rows
    size = math.floor(p * n)
    if size < 1:
        raise ValueError(f"subsample of proportion {p} from {n} rows would be empty")
    if size == n:
        return data
    rng = np.random.default_rng(seed & MASK64)
    idx = np.sort(rng.choice(n, size=size, replace=False))
    return data.take(idx)
