"""
Kernel ridge regression and the closed-form minimal empirical error aggregate.

Regularization convention: the normal equations are (K + reg * N * I) c = Y, so
``reg`` is a per-sample strength comparable across dataset sizes.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from app.aggregation.weights import cholesky_solve
from app.kernels.kernels import KernelSpec, as_points, gram
from app.utils.exceptions import FitFailed, InvalidInput

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KrrModel:
    """Fitted kernel ridge regressor in representer form f(x) = offset + k(x, anchors) @ coefficients."""

    anchors: np.ndarray
    coefficients: np.ndarray
    kernel: KernelSpec
    reg_strength: float
    offset: Optional[np.ndarray] = None

    def __post_init__(self):
        anchors = as_points(self.anchors)
        coefficients = np.asarray(self.coefficients, dtype=float)
        if coefficients.ndim == 1:
            coefficients = coefficients[:, None]
        if coefficients.shape[0] != anchors.shape[0]:
            raise InvalidInput(f"{coefficients.shape[0]} coefficient rows for {anchors.shape[0]} anchors")
        if self.reg_strength < 0:
            raise InvalidInput(f"reg_strength must be nonnegative, got {self.reg_strength}")
        offset = np.zeros(coefficients.shape[1]) if self.offset is None else np.asarray(self.offset, dtype=float)
        object.__setattr__(self, 'anchors', anchors)
        object.__setattr__(self, 'coefficients', coefficients)
        object.__setattr__(self, 'offset', offset.reshape(coefficients.shape[1]))

    @property
    def n_outputs(self) -> int:
        return self.coefficients.shape[1]

    def predict(self, X) -> np.ndarray:
        """Predict on a batch of inputs; returns (M, n_outputs)."""
        points = as_points(X)
        if points.shape[1] != self.anchors.shape[1]:
            raise InvalidInput(f"input dimension {points.shape[1]} does not match anchors ({self.anchors.shape[1]})")
        return self.offset + gram(self.kernel, points, self.anchors) @ self.coefficients


def krr_fit(X, Y, spec: KernelSpec, reg: float, center: bool = False) -> KrrModel:
    """
    Fit kernel ridge regression.

    Args:
        X: N feature vectors
        Y: Targets, (N,) or (N, m)
        spec: Kernel
        reg: Per-sample ridge strength (the system uses reg * N)
        center: Subtract the per-output target mean first, so predictions revert to
            that mean far from the data instead of to zero

    Returns:
        KrrModel with coefficients solving (K + reg N I) c = Y - offset
    """
    points = as_points(X)
    targets = np.asarray(Y, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    n_samples = points.shape[0]
    if n_samples < 1 or targets.shape[0] != n_samples:
        raise InvalidInput(f"need matching, non-empty X and Y, got {n_samples} and {targets.shape[0]}")
    if reg < 0:
        raise InvalidInput(f"reg must be nonnegative, got {reg}")
    if not np.all(np.isfinite(targets)):
        raise InvalidInput("targets must be finite")

    offset = targets.mean(axis=0) if center else np.zeros(targets.shape[1])
    system = gram(spec, points) + reg * n_samples * np.eye(n_samples)
    coefficients = cholesky_solve(system, targets - offset, error_cls=FitFailed)
    logger.debug("KRR fit on %d points, %d outputs, reg %.3e", n_samples, targets.shape[1], reg)
    return KrrModel(points, coefficients, spec, reg, offset)


def krr_predict(m: KrrModel, x) -> np.ndarray:
    """Predict the output vector at a single feature vector x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or x.shape[0] != m.anchors.shape[1]:
        raise InvalidInput(f"expected a feature vector of length {m.anchors.shape[1]}, got shape {x.shape}")
    return m.predict(x[None, :])[0]


ModelValuesFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MeeaPredictor:
    """
    Aggregate M_A(x) = k~(x, X) (k~(X, X) + reg N I)^{-1} Y with
    k~(x, y) = k(x, y) M(x)^T M(y).

    Equivalently alpha(x) = sum_j k(x, x_j) M(x_j) c_j and M_A(x) = alpha(x)^T M(x).
    """

    anchors: np.ndarray
    anchor_model_values: np.ndarray
    coefficients: np.ndarray
    kernel: KernelSpec
    reg_strength: float
    model_values_at: Optional[ModelValuesFn] = None

    def _model_values(self, points: np.ndarray, model_values) -> np.ndarray:
        if model_values is None:
            if self.model_values_at is None:
                raise InvalidInput("model values are required when no model function is attached")
            model_values = self.model_values_at(points)
        values = np.atleast_2d(np.asarray(model_values, dtype=float))
        if values.shape != (points.shape[0], self.anchor_model_values.shape[1]):
            raise InvalidInput(f"model values have shape {values.shape}, expected "
                               f"{(points.shape[0], self.anchor_model_values.shape[1])}")
        return values

    def weights(self, X) -> np.ndarray:
        """Weight functions alpha(x) for each input row; (M, n), not normalized."""
        points = as_points(X)
        return gram(self.kernel, points, self.anchors) @ (self.anchor_model_values * self.coefficients[:, None])

    def predict(self, X, model_values=None) -> np.ndarray:
        points = as_points(X)
        values = self._model_values(points, model_values)
        return np.sum(self.weights(points) * values, axis=1)

    def __call__(self, X, model_values=None) -> np.ndarray:
        return self.predict(X, model_values)


def transformed_gram(kernel: KernelSpec, X, model_values, X2=None, model_values2=None) -> np.ndarray:
    """k~(x, y) = k(x, y) M(x)^T M(y) for the diagonal matrix-valued kernel k I_n."""
    values = np.atleast_2d(np.asarray(model_values, dtype=float))
    values2 = values if model_values2 is None else np.atleast_2d(np.asarray(model_values2, dtype=float))
    return gram(kernel, X, X2) * (values @ values2.T)


def meea_closed_form(X, Y, model_values_at, kernel: KernelSpec, reg: float,
                     model_values=None) -> MeeaPredictor:
    """
    Minimal empirical error aggregation in closed form (scalar KRR in the kernel k~).

    Args:
        X: N inputs
        Y: N targets
        model_values_at: Callable mapping an (N, d) input array to the (N, n) model values
        kernel: Base scalar kernel k on the inputs
        reg: Per-sample ridge strength
        model_values: Precomputed (N, n) model values at X (skips calling model_values_at)

    Returns:
        MeeaPredictor
    """
    points = as_points(X)
    targets = np.asarray(Y, dtype=float).reshape(-1)
    if len(targets) != len(points):
        raise InvalidInput(f"{len(points)} inputs for {len(targets)} targets")
    if model_values is None:
        if model_values_at is None:
            raise InvalidInput("either model_values_at or model_values must be given")
        model_values = model_values_at(points)
    values = np.atleast_2d(np.asarray(model_values, dtype=float))
    if values.shape[0] != len(points):
        raise InvalidInput(f"model values have {values.shape[0]} rows for {len(points)} inputs")

    n_samples = len(points)
    system = transformed_gram(kernel, points, values) + reg * n_samples * np.eye(n_samples)
    coefficients = cholesky_solve(system, targets, error_cls=FitFailed)
    return MeeaPredictor(points, values, coefficients, kernel, reg, model_values_at)
