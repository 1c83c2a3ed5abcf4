"""
Base regressors for the tabular benchmark.

All learners share ``fit(X, y)`` / ``predict(X)`` and standardize features with
statistics of the data they are fitted on.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from app.kernels.kernels import KernelSpec, median_lengthscale
from app.kernels.krr import KrrModel, krr_fit
from app.tabular.dataset import Standardizer
from app.utils.exceptions import InvalidInput

logger = logging.getLogger(__name__)

LEARNER_KINDS = ('ridge', 'knn', 'gbt', 'krr')
LEARNER_DEFAULTS = {
    'ridge': {'reg': 1.0},
    'knn': {'k': 5},
    'gbt': {'rounds': 200, 'shrinkage': 0.05, 'depth': 3},
    'krr': {'reg': 1e-2},
}


class BaseLearner:
    """Common input checks; subclasses implement ``_fit`` and ``_predict`` on standardized features."""

    kind = 'base'

    def __init__(self):
        self.standardizer = None

    def fit(self, X, y) -> "BaseLearner":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X[:, None]
        if len(y) == 0 or X.shape[0] == 0:
            raise InvalidInput(f"cannot fit {self.kind} on an empty split")
        if X.shape[0] != len(y):
            raise InvalidInput(f"{X.shape[0]} feature rows for {len(y)} targets")
        self.standardizer = Standardizer().fit(X)
        self._fit(self.standardizer.transform(X), y)
        return self

    def predict(self, X) -> np.ndarray:
        if self.standardizer is None:
            raise InvalidInput(f"{self.kind} learner used before fit")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return self._predict(self.standardizer.transform(X))

    def __call__(self, X) -> np.ndarray:
        return self.predict(X)

    def _fit(self, Z: np.ndarray, y: np.ndarray):
        raise NotImplementedError

    def _predict(self, Z: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class RidgeLearner(BaseLearner):
    """Penalized least squares on standardized features; the intercept is not penalized."""

    kind = 'ridge'

    def __init__(self, reg: float = 1.0):
        super().__init__()
        if reg < 0:
            raise InvalidInput(f"reg must be nonnegative, got {reg}")
        self.reg = reg
        self.beta = None
        self.intercept = 0.0

    def _fit(self, Z, y):
        self.intercept = float(y.mean())
        centered = y - self.intercept
        if self.reg == 0:
            self.beta = np.linalg.lstsq(Z, centered, rcond=None)[0]
        else:
            gram = Z.T @ Z + self.reg * np.eye(Z.shape[1])
            self.beta = scipy.linalg.solve(gram, Z.T @ centered, assume_a='pos')

    def _predict(self, Z):
        return self.intercept + Z @ self.beta

    @property
    def coefficients(self) -> Tuple[np.ndarray, float]:
        """Slopes and intercept in the original feature units."""
        slopes = self.beta / self.standardizer.scale
        return slopes, self.intercept - float(self.standardizer.mean @ slopes)


class KnnLearner(BaseLearner):
    """Mean target of the k nearest training points (Euclidean, standardized features)."""

    kind = 'knn'

    def __init__(self, k: int = 5):
        super().__init__()
        if k < 1:
            raise InvalidInput(f"k must be at least 1, got {k}")
        self.k = k
        self.tree = None
        self.targets = None

    def _fit(self, Z, y):
        self.tree = cKDTree(Z)
        self.targets = y

    def _predict(self, Z):
        k = min(self.k, len(self.targets))
        _, neighbours = self.tree.query(Z, k=k)
        neighbours = np.asarray(neighbours).reshape(len(Z), k)
        return self.targets[neighbours].mean(axis=1)


@dataclass
class _TreeNode:
    value: float
    feature: int = -1
    threshold: float = 0.0
    left: Optional["_TreeNode"] = None
    right: Optional["_TreeNode"] = None


def _best_split(Z: np.ndarray, r: np.ndarray) -> Optional[Tuple[int, float]]:
    """Split maximizing the reduction of the squared error; ties keep the first feature."""
    n = len(r)
    total = r.sum()
    best_gain, best = -np.inf, None
    counts = np.arange(1, n)
    for j in range(Z.shape[1]):
        order = np.argsort(Z[:, j], kind='stable')
        xs, rs = Z[order, j], r[order]
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        left = np.cumsum(rs)[:-1]
        gains = left ** 2 / counts + (total - left) ** 2 / (n - counts) - total ** 2 / n
        gains[~valid] = -np.inf
        i = int(np.argmax(gains))
        if gains[i] > best_gain:
            best_gain = gains[i]
            best = (j, 0.5 * (xs[i] + xs[i + 1]))
    return best


def _grow(Z: np.ndarray, r: np.ndarray, depth: int) -> _TreeNode:
    node = _TreeNode(float(r.mean()))
    if depth == 0 or len(r) < 2:
        return node
    split_at = _best_split(Z, r)
    if split_at is None:
        return node
    node.feature, node.threshold = split_at
    mask = Z[:, node.feature] <= node.threshold
    node.left = _grow(Z[mask], r[mask], depth - 1)
    node.right = _grow(Z[~mask], r[~mask], depth - 1)
    return node


def _tree_predict(node: _TreeNode, Z: np.ndarray) -> np.ndarray:
    if node.left is None:
        return np.full(len(Z), node.value)
    out = np.empty(len(Z))
    mask = Z[:, node.feature] <= node.threshold
    out[mask] = _tree_predict(node.left, Z[mask])
    out[~mask] = _tree_predict(node.right, Z[~mask])
    return out


class GradientBoostingLearner(BaseLearner):
    """
    Least-squares gradient boosting of regression trees.

    Starts from the target mean; each round fits a tree of depth at most
    ``depth`` to the residuals and adds ``shrinkage`` times its prediction.
    """

    kind = 'gbt'

    def __init__(self, rounds: int = 200, shrinkage: float = 0.05, depth: int = 3):
        super().__init__()
        if rounds < 0 or not 0 < shrinkage <= 1 or depth < 1:
            raise InvalidInput(f"need rounds >= 0, shrinkage in (0, 1] and depth >= 1, "
                               f"got {rounds}, {shrinkage}, {depth}")
        self.rounds = rounds
        self.shrinkage = shrinkage
        self.depth = depth
        self.base = 0.0
        self.trees: List[_TreeNode] = []
        self.train_mse: List[float] = []

    def _fit(self, Z, y):
        self.base = float(y.mean())
        self.trees = []
        fitted = np.full(len(y), self.base)
        self.train_mse = [float(np.mean((y - fitted) ** 2))]
        for _ in range(self.rounds):
            tree = _grow(Z, y - fitted, self.depth)
            self.trees.append(tree)
            fitted = fitted + self.shrinkage * _tree_predict(tree, Z)
            self.train_mse.append(float(np.mean((y - fitted) ** 2)))
        logger.debug("gbt: training MSE %.4g -> %.4g over %d rounds",
                     self.train_mse[0], self.train_mse[-1], self.rounds)

    def _predict(self, Z):
        out = np.full(len(Z), self.base)
        for tree in self.trees:
            out += self.shrinkage * _tree_predict(tree, Z)
        return out


class KrrLearner(BaseLearner):
    """Centered kernel ridge regression, Matern-3/2 with the median-distance lengthscale."""

    kind = 'krr'

    def __init__(self, reg: float = 1e-2):
        super().__init__()
        self.reg = reg
        self.model: Optional[KrrModel] = None

    def _fit(self, Z, y):
        kernel = KernelSpec('matern32', median_lengthscale(Z))
        self.model = krr_fit(Z, y, kernel, self.reg, center=True)

    def _predict(self, Z):
        return self.model.predict(Z)[:, 0]


LEARNERS = {
    'ridge': RidgeLearner,
    'knn': KnnLearner,
    'gbt': GradientBoostingLearner,
    'krr': KrrLearner,
}


def make_learner(kind: str, params: Optional[Dict] = None) -> BaseLearner:
    """Instantiate a learner with its defaults overridden by ``params``."""
    if kind not in LEARNERS:
        raise InvalidInput(f"unknown learner '{kind}', expected one of {LEARNER_KINDS}")
    settings = dict(LEARNER_DEFAULTS[kind])
    settings.update(params or {})
    return LEARNERS[kind](**settings)
