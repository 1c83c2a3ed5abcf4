"""
Minimal empirical variance aggregation (MEVA) fitting.

The error covariance is modelled as P^T Diag(exp(lambda(x))) P with lambda a
vector of kernel regressors. Two losses fit lambda:

* the sharp loss: lambda_k regresses ln((P e^i)_k^2), closed-form KRR;
* the covariance loss: sum_i sum_k (exp(lambda_k(x^i)) - (P e^i)_k^2)^2 plus the
  RKHS penalty, minimized by Gauss-Newton starting from the sharp solution.

Both regressors carry an unpenalized constant offset so that away from the
validation data lambda reverts to each model's mean log error.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from app.aggregation.weights import (
    CovarianceModel,
    WeightVector,
    aggregate_pointwise,
    rotated_weights,
    rotated_weights_rows,
)
from app.kernels.kernels import KernelSpec, gram
from app.kernels.krr import KrrModel, krr_fit, krr_predict
from app.training.line_search import halving_search
from app.training.samples import ErrorSamples
from app.utils.exceptions import FitFailed, InvalidInput

logger = logging.getLogger(__name__)

SQUARED_ERROR_FLOOR = 1e-24
# Relative diagonal jitter of the Gram matrix used to whiten the covariance-loss fit
GN_JITTER = 1e-10
LOSS_KINDS = ('covariance', 'sharp')


@dataclass(frozen=True)
class MevaAggregator:
    """
    Fitted MEVA aggregator.

    Attributes:
        log_var_model: KRR model with one output per model (the functions lambda_k)
        basis: Orthonormal matrix P (identity for independent errors)
        loss_kind: 'sharp' or 'covariance'
        history: Objective values of the iterative fit, empty for closed-form fits
    """

    log_var_model: KrrModel
    basis: np.ndarray
    loss_kind: str = 'sharp'
    history: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        n = self.log_var_model.n_outputs
        basis = np.asarray(self.basis, dtype=float)
        if basis.shape != (n, n):
            raise InvalidInput(f"basis shape {basis.shape} does not match {n} models")
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidInput(f"unknown loss kind '{self.loss_kind}'")
        object.__setattr__(self, 'basis', basis)

    @property
    def n_models(self) -> int:
        return self.log_var_model.n_outputs

    def log_vars(self, X) -> np.ndarray:
        return self.log_var_model.predict(X)

    def weights(self, X) -> np.ndarray:
        """Weights alpha(x) for a batch of inputs; (M, n), rows sum to one."""
        return rotated_weights_rows(self.log_vars(X), self.basis)

    def predict(self, X, model_values) -> np.ndarray:
        values = np.atleast_2d(np.asarray(model_values, dtype=float))
        weights = self.weights(X)
        if values.shape != weights.shape:
            raise InvalidInput(f"model values have shape {values.shape}, expected {weights.shape}")
        return np.sum(weights * values, axis=1)


def predict(agg: MevaAggregator, x, model_values) -> Tuple[WeightVector, float]:
    """Weights and aggregate value at a single input x."""
    log_vars = krr_predict(agg.log_var_model, x)
    weights = rotated_weights(CovarianceModel(log_vars, agg.basis))
    return weights, aggregate_pointwise(weights, model_values)


def _resolve_basis(basis: Optional[np.ndarray], n_models: int) -> np.ndarray:
    if basis is None:
        return np.eye(n_models)
    basis = np.asarray(basis, dtype=float)
    # Validates shape and orthonormality
    CovarianceModel(np.zeros(n_models), basis)
    return basis


def rotated_squared_errors(s: ErrorSamples, basis: np.ndarray) -> np.ndarray:
    """(P e^i)_k^2 for every sample and component."""
    return (s.errors @ basis.T) ** 2


def fit_meva_sharp(s: ErrorSamples, kernel: KernelSpec, reg: float,
                   basis: Optional[np.ndarray] = None, center: bool = True) -> MevaAggregator:
    """
    Fit lambda with the sharp (log squared error) loss.

    With center=True (the default) each lambda_k carries the unpenalized mean of
    its log squared errors as an offset, so this is not the pure RKHS minimizer of
    the sharp loss; center=False gives that fit.

    Args:
        s: Validation samples
        kernel: Kernel on the inputs of ``s``
        reg: Per-sample ridge strength
        basis: Orthonormal P; errors are rotated to P e^i first
        center: Fit an unpenalized constant offset per model

    Returns:
        MevaAggregator with loss_kind 'sharp'
    """
    basis = _resolve_basis(basis, s.n_models)
    targets = np.log(np.maximum(rotated_squared_errors(s, basis), SQUARED_ERROR_FLOOR))
    model = krr_fit(s.inputs, targets, kernel, reg, center=center)
    return MevaAggregator(model, basis, 'sharp')


def _whitening(K: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    jittered = K + GN_JITTER * np.trace(K) / len(K) * np.eye(len(K))
    try:
        L = scipy.linalg.cholesky(jittered, lower=True)
    except np.linalg.LinAlgError as e:
        raise FitFailed(f"Gram matrix could not be factorized: {e}") from e
    return jittered, L


def covariance_objective(agg: MevaAggregator, s: ErrorSamples) -> float:
    """
    Covariance-loss objective of ``agg`` on the samples it was fitted to.

    sum_i sum_k (exp(lambda_k(x^i)) - (P e^i)_k^2)^2 + reg N sum_k c_k^T K c_k. Both
    terms use the Gram matrix with the same diagonal jitter as the Gauss-Newton fit,
    so the value matches the first entry of its history.
    """
    model = agg.log_var_model
    if len(model.anchors) != s.n_samples:
        raise InvalidInput("covariance objective needs the samples the aggregator was fitted on")
    squared = rotated_squared_errors(s, agg.basis)
    jittered, _ = _whitening(gram(model.kernel, model.anchors))
    c = model.coefficients
    with np.errstate(over='ignore'):
        residuals = np.exp(model.offset + jittered @ c) - squared
    penalty = model.reg_strength * len(model.anchors) * float(np.sum(c * (jittered @ c)))
    return float(np.sum(residuals ** 2)) + penalty


def _column_objective(m: float, beta: np.ndarray, L: np.ndarray, targets: np.ndarray, a: float) -> float:
    with np.errstate(over='ignore', invalid='ignore'):
        residuals = np.exp(m + L @ beta) - targets
        value = float(residuals @ residuals + a * beta @ beta)
    return value if np.isfinite(value) else np.inf


def _gauss_newton_column(L: np.ndarray, targets: np.ndarray, m: float, beta: np.ndarray,
                         a: float, iters: int, column: int) -> Tuple[float, np.ndarray, List[float]]:
    n_samples = len(targets)
    design = np.hstack([np.ones((n_samples, 1)), L])
    penalty = np.concatenate([[0.0], np.full(n_samples, a)])
    theta = np.concatenate([[m], beta])
    value = _column_objective(m, beta, L, targets, a)
    history = [value]

    for iteration in range(iters):
        f = design @ theta
        scale = np.exp(f)
        residuals = scale - targets
        jacobian = scale[:, None] * design
        gradient = jacobian.T @ residuals + penalty * theta
        normal = jacobian.T @ jacobian + np.diag(penalty)
        damping = 1e-12 * (np.trace(normal) / len(normal) + 1e-300)
        try:
            step = -scipy.linalg.solve(normal + damping * np.eye(len(normal)), gradient, assume_a='pos')
        except (np.linalg.LinAlgError, ValueError):
            step = -np.linalg.lstsq(normal, gradient, rcond=None)[0]

        predicted = -float(gradient @ step)
        if predicted <= 1e-13 * max(value, 1e-300):
            logger.debug("column %d converged after %d iterations", column, iteration)
            break

        def evaluate(t):
            candidate = theta + t * step
            return _column_objective(candidate[0], candidate[1:], L, targets, a), candidate

        accepted = halving_search(evaluate, value, f"Gauss-Newton step for model {column}")
        if accepted is None:
            break
        _, new_value, theta = accepted
        decrease = value - new_value
        value = new_value
        history.append(value)
        if decrease <= 1e-14 * max(value, 1e-300):
            break
    return float(theta[0]), theta[1:], history


def fit_meva_gn(s: ErrorSamples, kernel: KernelSpec, reg: float, iters: int = 50,
                basis: Optional[np.ndarray] = None, center: bool = True) -> MevaAggregator:
    """
    Fit lambda with the covariance loss by Gauss-Newton.

    Each lambda_k is parameterized as m_k + L beta_k on the samples, with L the
    Cholesky factor of the (jittered) Gram matrix, so the RKHS penalty is
    reg N |beta_k|^2 and the offset m_k is unpenalized. Steps are halved until the
    objective does not increase.

    Args:
        s: Validation samples
        kernel: Kernel on the inputs
        reg: Per-sample ridge strength
        iters: Maximum Gauss-Newton iterations per model
        basis: Orthonormal P
        center: Start from the centered sharp-loss fit

    Returns:
        MevaAggregator with loss_kind 'covariance' and the total objective history
    """
    if iters < 1:
        raise InvalidInput(f"iters must be at least 1, got {iters}")
    basis = _resolve_basis(basis, s.n_models)
    initial = fit_meva_sharp(s, kernel, reg, basis, center=center)
    model = initial.log_var_model

    K = gram(kernel, model.anchors)
    _, L = _whitening(K)
    targets = rotated_squared_errors(s, basis)
    a = reg * s.n_samples

    coefficients = np.empty_like(model.coefficients)
    offsets = np.empty(s.n_models)
    histories = []
    for k in range(s.n_models):
        beta0 = L.T @ model.coefficients[:, k]
        m_k, beta_k, history_k = _gauss_newton_column(L, targets[:, k], float(model.offset[k]),
                                                      beta0, a, iters, k)
        offsets[k] = m_k
        coefficients[:, k] = scipy.linalg.solve_triangular(L.T, beta_k, lower=False)
        histories.append(history_k)

    length = max(len(h) for h in histories)
    history = tuple(float(sum(h[min(i, len(h) - 1)] for h in histories)) for i in range(length))
    logger.info("covariance loss fit: objective %.6g -> %.6g in %d iterations",
                history[0], history[-1], length - 1)
    fitted = KrrModel(model.anchors, coefficients, kernel, reg, offsets)
    return MevaAggregator(fitted, basis, 'covariance', history)
