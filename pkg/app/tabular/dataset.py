"""
Tabular regression datasets: CSV ingestion, seeded train/val/test splits and
feature standardization fitted on the training split.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.utils.exceptions import InvalidInput, MissingColumn, ParseError
from app.utils.tables import write_table

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.6, 0.2, 0.2)
RATIO_TOLERANCE = 1e-9


@dataclass(frozen=True)
class TabularDataset:
    """
    Attributes:
        features: (N, d) feature matrix
        targets: (N,) regression targets
        columns: Feature column names
        target_name: Name of the target column
        indices: Row positions in the source table, used to check splits
        dropped_rows: Rows removed during ingestion because a cell was missing
    """

    features: np.ndarray
    targets: np.ndarray
    columns: Tuple[str, ...]
    target_name: str
    indices: np.ndarray = None
    dropped_rows: int = 0

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.ndim == 1:
            features = features[:, None]
        targets = np.asarray(self.targets, dtype=float).reshape(-1)
        if features.shape[0] != len(targets):
            raise InvalidInput(f"{features.shape[0]} feature rows for {len(targets)} targets")
        if features.shape[1] != len(self.columns):
            raise InvalidInput(f"{features.shape[1]} feature columns for {len(self.columns)} names")
        indices = np.arange(len(targets)) if self.indices is None else np.asarray(self.indices, dtype=int)
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'targets', targets)
        object.__setattr__(self, 'columns', tuple(self.columns))
        object.__setattr__(self, 'indices', indices)

    def __len__(self):
        return len(self.targets)

    def take(self, rows) -> "TabularDataset":
        rows = np.asarray(rows, dtype=int)
        return TabularDataset(self.features[rows], self.targets[rows], self.columns,
                              self.target_name, self.indices[rows])

    def concat(self, other: "TabularDataset") -> "TabularDataset":
        if other.columns != self.columns:
            raise InvalidInput("cannot concatenate datasets with different columns")
        return TabularDataset(np.vstack([self.features, other.features]),
                              np.concatenate([self.targets, other.targets]), self.columns,
                              self.target_name, np.concatenate([self.indices, other.indices]))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.features, columns=list(self.columns))
        frame[self.target_name] = self.targets
        return frame


def load_csv(path: Union[str, Path], target_column: str) -> TabularDataset:
    """
    Read a regression CSV whose columns are all numeric.

    Rows with an empty cell are dropped and counted; any other non-numeric cell
    is an error.

    Args:
        path: CSV file with a header row
        target_column: Name of the regression target

    Returns:
        TabularDataset with every other column as a feature, rows in file order

    Raises:
        MissingColumn: The target column is absent
        ParseError: A cell is not a number; ``row`` is the 1-based data row
    """
    path = Path(path)
    try:
        raw = pd.read_csv(path, dtype=str, skipinitialspace=True, encoding='utf-8')
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"could not read {path}: {e}") from e
    raw.columns = [str(column).strip() for column in raw.columns]
    if target_column not in raw.columns:
        raise MissingColumn(f"target column '{target_column}' not in {list(raw.columns)}")

    missing = raw.isna() | (raw.apply(lambda column: column.str.strip()) == '')
    numeric = raw.apply(lambda column: pd.to_numeric(column.str.strip(), errors='coerce'))
    bad = numeric.isna() & ~missing
    if bad.values.any():
        row, col = np.argwhere(bad.values)[0]
        column = raw.columns[col]
        raise ParseError(f"non-numeric value '{raw.iat[row, col]}' in column '{column}', row {row + 1}",
                         row=int(row) + 1, column=column)

    keep = ~missing.any(axis=1).values
    dropped = int((~keep).sum())
    if dropped:
        logger.info("dropped %d rows with missing values from %s", dropped, path.name)
    numeric = numeric[keep]
    feature_columns = [column for column in numeric.columns if column != target_column]
    return TabularDataset(numeric[feature_columns].to_numpy(dtype=float), numeric[target_column].to_numpy(dtype=float),
                          tuple(feature_columns), target_column, np.flatnonzero(keep), dropped)


def write_csv(ds: TabularDataset, path: Union[str, Path]) -> Path:
    """Write features then target, readable again by ``load_csv``."""
    return write_table(ds.to_frame(), path)


def split(ds: TabularDataset, ratios: Sequence[float], rng: np.random.Generator) -> List[TabularDataset]:
    """
    Shuffle and cut the dataset into train, validation and test parts.

    The first two sizes are round(N * ratio); the test part takes the rest.

    Args:
        ds: Dataset to split
        ratios: (train, val, test) fractions summing to one
        rng: Source of the permutation

    Returns:
        [train, val, test]
    """
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > RATIO_TOLERANCE:
        raise InvalidInput(f"ratios must be three nonnegative numbers summing to 1, got {list(ratios)}")
    n = len(ds)
    n_train = min(n, int(round(n * ratios[0])))
    n_val = min(n - n_train, int(round(n * ratios[1])))
    order = rng.permutation(n)
    return [ds.take(order[:n_train]), ds.take(order[n_train:n_train + n_val]), ds.take(order[n_train + n_val:])]


class Standardizer:
    """Per-column affine map to zero mean and unit variance, fitted once."""

    def __init__(self):
        self.mean = None
        self.scale = None

    def fit(self, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or len(X) == 0:
            raise InvalidInput(f"need a non-empty 2-D feature matrix, got shape {X.shape}")
        self.mean = X.mean(axis=0)
        scale = X.std(axis=0)
        # Constant columns are centred only
        self.scale = np.where(scale > 0, scale, 1.0)
        return self

    def transform(self, X) -> np.ndarray:
        if self.mean is None:
            raise InvalidInput("standardizer used before fit")
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def fit_transform(self, X) -> np.ndarray:
        return self.fit(X).transform(X)


def synthetic_regression(rng: np.random.Generator, n: int = 506, d: int = 13, noise: float = 1.0) -> TabularDataset:
    """
    Smooth nonlinear regression problem used when no CSV is supplied.

    Only the first five features matter:
    y = 10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5 + noise.
    """
    if d < 5:
        raise InvalidInput(f"need at least 5 features, got {d}")
    X = rng.uniform(size=(n, d))
    y = (10.0 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20.0 * (X[:, 2] - 0.5) ** 2
         + 10.0 * X[:, 3] + 5.0 * X[:, 4] + noise * rng.normal(size=n))
    return TabularDataset(X, y, tuple(f'x{j + 1}' for j in range(d)), 'y')
