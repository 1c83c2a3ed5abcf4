"""
Pointwise aggregation weights.

Houses the minimal-variance (BLUE) weights, their softmax and rotated-basis
parameterizations, the exact minimal-error weights and the pointwise
aggregation rule M_A(x) = alpha(x)^T M(x).

Every function here is pure and safe to call from any thread.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Type

import numpy as np
import scipy.linalg

from app.utils.exceptions import (
    DegenerateRotation,
    EmptyBank,
    InvalidInput,
    MevaError,
    SingularCovariance,
)

logger = logging.getLogger(__name__)

# Relative nugget added to the diagonal when a first Cholesky attempt fails
NUGGET_RELATIVE = 1e-12
# Softmax weights below this are flushed to exactly zero
WEIGHT_FLUSH = 1e-300
SUM_TOLERANCE = 1e-12


def cholesky_solve(A: np.ndarray, B: np.ndarray,
                   error_cls: Type[MevaError] = SingularCovariance,
                   nugget: float = NUGGET_RELATIVE) -> np.ndarray:
    """
    Solve A X = B for symmetric positive definite A.

    A first Cholesky factorization is attempted as is; on failure a nugget of
    ``nugget * trace(A) / n`` is added to the diagonal and the factorization is
    retried once. A second failure raises ``error_cls``.

    Args:
        A: Symmetric positive definite (n, n) matrix
        B: Right-hand side, (n,) or (n, k)
        error_cls: Exception raised when both attempts fail
        nugget: Relative nugget used for the retry

    Returns:
        Solution with the shape of B
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        jitter = nugget * max(np.trace(A), 0.0) / n
        logger.debug("Cholesky failed, retrying with nugget %.3e", jitter)
        try:
            factor = scipy.linalg.cho_factor(A + jitter * np.eye(n), lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as e:
            raise error_cls(f"matrix of size {n} is not positive definite: {e}") from e
    return scipy.linalg.cho_solve(factor, B)


def _as_finite_vector(values, name: str) -> np.ndarray:
    vector = np.asarray(values, dtype=float)
    if vector.ndim != 1:
        raise InvalidInput(f"{name} must be a vector, got shape {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise InvalidInput(f"{name} has non-finite entries")
    return vector


@dataclass(frozen=True)
class WeightVector:
    """Aggregation weights alpha(x); sum to one unless produced by ``mea_weights``."""

    weights: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if not np.all(np.isfinite(weights)):
            raise InvalidInput("weights must be finite")
        object.__setattr__(self, 'weights', weights)

    def __len__(self):
        return len(self.weights)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)


@dataclass(frozen=True)
class CovarianceModel:
    """Error covariance P^T Diag(exp(log_vars)) P with an orthonormal basis P."""

    log_vars: np.ndarray
    basis: Optional[np.ndarray] = None

    def __post_init__(self):
        log_vars = _as_finite_vector(self.log_vars, "log_vars")
        n = len(log_vars)
        basis = np.eye(n) if self.basis is None else np.asarray(self.basis, dtype=float)
        if basis.shape != (n, n):
            raise InvalidInput(f"basis must be {n}x{n}, got {basis.shape}")
        if not np.allclose(basis @ basis.T, np.eye(n), atol=1e-10, rtol=0.0):
            raise InvalidInput("basis is not orthonormal (P P^T != I)")
        object.__setattr__(self, 'log_vars', log_vars)
        object.__setattr__(self, 'basis', basis)

    def matrix(self) -> np.ndarray:
        """Reconstruct the dense covariance matrix."""
        return self.basis.T @ np.diag(np.exp(self.log_vars)) @ self.basis


@dataclass(frozen=True)
class SecondMoments:
    """Model second moments C = E[M M^T] and cross moments gamma = E[Y M]."""

    C: np.ndarray
    gamma: np.ndarray = field(default=None)

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        gamma = _as_finite_vector(self.gamma, "gamma")
        if C.shape != (len(gamma), len(gamma)):
            raise InvalidInput(f"C has shape {C.shape}, expected {(len(gamma), len(gamma))}")
        if not np.allclose(C, C.T, rtol=1e-10, atol=1e-14):
            raise InvalidInput("C must be symmetric")
        object.__setattr__(self, 'C', C)
        object.__setattr__(self, 'gamma', gamma)


def mva_weights(A: np.ndarray) -> WeightVector:
    """
    Minimal variance (BLUE) weights A^{-1} 1 / (1^T A^{-1} 1).

    Args:
        A: Symmetric positive definite error covariance

    Returns:
        WeightVector summing to one
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInput(f"A must be square, got shape {A.shape}")
    n = A.shape[0]
    if n == 0:
        raise EmptyBank("cannot aggregate an empty model bank")
    if not np.allclose(A, A.T, rtol=1e-10, atol=1e-14):
        raise InvalidInput("A must be symmetric")
    precision_ones = cholesky_solve(A, np.ones(n))
    total = precision_ones.sum()
    if not np.isfinite(total) or total == 0.0:
        raise SingularCovariance("1^T A^{-1} 1 vanished")
    return WeightVector(precision_ones / total)


def softmax_rows(neg_logits: np.ndarray) -> np.ndarray:
    """
    Row-wise softmax of ``neg_logits`` with max-subtraction and flushing.

    Args:
        neg_logits: (..., n) array of exponents (already negated log-variances)

    Returns:
        Array of the same shape whose last axis sums to one
    """
    z = np.asarray(neg_logits, dtype=float)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    expd = np.exp(shifted)
    weights = expd / expd.sum(axis=-1, keepdims=True)
    weights[weights < WEIGHT_FLUSH] = 0.0
    return weights


def softmax_weights(log_vars) -> WeightVector:
    """Weights exp(-lambda_i) / sum_k exp(-lambda_k), i.e. MVA for Diag(exp(lambda))."""
    log_vars = _as_finite_vector(log_vars, "log_vars")
    if len(log_vars) == 0:
        raise EmptyBank("cannot aggregate an empty model bank")
    return WeightVector(softmax_rows(-log_vars))


def rotated_weights_rows(log_vars: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """
    Vectorized rotated-basis weights for a batch of log-variance rows.

    alpha^T = 1^T P^T D P / (1^T P^T D P 1) with D = Diag(exp(-lambda)).

    Args:
        log_vars: (N, n) log-eigenvalues
        basis: Orthonormal (n, n) matrix P

    Returns:
        (N, n) weights, each row summing to one
    """
    log_vars = np.atleast_2d(np.asarray(log_vars, dtype=float))
    n = log_vars.shape[1]
    if np.allclose(basis, np.eye(n), atol=0.0, rtol=0.0):
        return softmax_rows(-log_vars)
    rotated_ones = basis @ np.ones(n)
    # exp(-(lambda - min lambda)) keeps the largest precision at 1
    precisions = np.exp(-(log_vars - log_vars.min(axis=1, keepdims=True)))
    scaled = precisions * rotated_ones
    denominators = scaled @ rotated_ones
    scale = np.abs(precisions).sum(axis=1)
    if np.any(np.abs(denominators) < 1e-14 * np.maximum(scale, 1.0)):
        raise DegenerateRotation("1^T P^T D P 1 vanished for the given basis")
    return (scaled @ basis) / denominators[:, None]


def rotated_weights(model: CovarianceModel) -> WeightVector:
    """Minimal variance weights for a covariance with a general orthonormal basis."""
    if len(model.log_vars) == 0:
        raise EmptyBank("cannot aggregate an empty model bank")
    return WeightVector(rotated_weights_rows(model.log_vars[None, :], model.basis)[0])


def mea_weights(m: SecondMoments) -> np.ndarray:
    """
    Minimal error aggregation weights C^{-1} gamma.

    The result is NOT renormalized; it minimizes E[(Y - alpha^T M)^2] without the
    unbiasedness constraint.
    """
    if len(m.gamma) == 0:
        raise EmptyBank("cannot aggregate an empty model bank")
    return cholesky_solve(m.C, m.gamma)


def aggregate_pointwise(w, model_values) -> float:
    """Pointwise aggregate alpha^T M(x)."""
    weights = np.asarray(w, dtype=float)
    values = np.asarray(model_values, dtype=float)
    if weights.shape != values.shape or weights.ndim != 1:
        raise InvalidInput(f"length mismatch: {weights.shape} weights vs {values.shape} values")
    return float(weights @ values)


def with_constant_model(model_values: np.ndarray, constant: float = 1.0) -> np.ndarray:
    """
    Append a constant model column, turning linear aggregation into affine aggregation.

    Opt-in only: empirical error minimization with a constant model can use it to
    regress the target directly and ignore the real models.
    """
    values = np.atleast_2d(np.asarray(model_values, dtype=float))
    return np.hstack([values, np.full((values.shape[0], 1), constant)])


def empirical_error_basis(errors: np.ndarray) -> np.ndarray:
    """
    Orthonormal eigenbasis P of the empirical error covariance (1/N) sum e e^T.

    Rows of the returned matrix are eigenvectors, so P C P^T is diagonal. With
    strongly correlated models an eigenvector can nearly cancel the all-ones
    vector, which makes the rotated weights large and of opposite signs.
    """
    errors = np.atleast_2d(np.asarray(errors, dtype=float))
    covariance = errors.T @ errors / errors.shape[0]
    _, vectors = np.linalg.eigh(covariance)
    return vectors.T
