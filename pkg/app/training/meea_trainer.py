"""
Minimal empirical error aggregation (MEEA) fits.

MEEA minimizes the regularized empirical squared error of the aggregate
directly. Three hypothesis spaces are offered: the kernel closed form (weights
in a diagonal matrix-valued RKHS), weights affine in x (solved in the primal)
and softmax-constrained weights with kernel logits (solved by Gauss-Newton).
"""

import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import scipy.linalg

from app.aggregation.weights import softmax_rows
from app.kernels.kernels import KernelSpec, as_points, gram
from app.kernels.krr import MeeaPredictor, meea_closed_form
from app.training.line_search import halving_search
from app.training.samples import ErrorSamples
from app.utils.exceptions import FitFailed, InvalidInput

logger = logging.getLogger(__name__)

SOFTMAX_JITTER = 1e-10


def fit_meea(s: ErrorSamples, kernel: KernelSpec, reg: float) -> MeeaPredictor:
    """Kernel MEEA on the stored model values; see ``meea_closed_form``."""
    return meea_closed_form(s.inputs, s.targets, None, kernel, reg, model_values=s.model_values)


@dataclass(frozen=True)
class LinearMeea:
    """MEEA whose weights are affine in x: alpha_k(x) = slopes[k] . x + intercepts[k]."""

    slopes: np.ndarray
    intercepts: np.ndarray

    def weights(self, X) -> np.ndarray:
        return as_points(X) @ self.slopes.T + self.intercepts

    def predict(self, X, model_values) -> np.ndarray:
        values = np.atleast_2d(np.asarray(model_values, dtype=float))
        return np.sum(self.weights(X) * values, axis=1)


def _linear_design(points: np.ndarray, model_values: np.ndarray) -> np.ndarray:
    # Per model k: columns x_1 M_k ... x_d M_k, then M_k
    blocks = [np.hstack([points * model_values[:, [k]], model_values[:, [k]]])
              for k in range(model_values.shape[1])]
    return np.hstack(blocks)


def fit_meea_linear(s: ErrorSamples, reg: float = 0.0) -> LinearMeea:
    """
    MEEA with affine weight functions.

    With reg = 0 this is the least-squares (minimum-norm) solution; otherwise the
    coefficients carry a ridge penalty reg * N.
    """
    design = _linear_design(s.inputs, s.model_values)
    if reg > 0:
        normal = design.T @ design + reg * s.n_samples * np.eye(design.shape[1])
        coefficients = scipy.linalg.solve(normal, design.T @ s.targets, assume_a='pos')
    else:
        coefficients = np.linalg.lstsq(design, s.targets, rcond=None)[0]
    d = s.inputs.shape[1]
    blocks = coefficients.reshape(s.n_models, d + 1)
    return LinearMeea(blocks[:, :d], blocks[:, d])


@dataclass(frozen=True)
class SoftmaxMeea:
    """MEEA constrained to convex weights: M_A(x) = softmax(nu(x))^T M(x), nu = k(x, X) C."""

    anchors: np.ndarray
    coefficients: np.ndarray
    kernel: KernelSpec
    reg_strength: float
    history: Tuple[float, ...] = field(default_factory=tuple)

    def logits(self, X) -> np.ndarray:
        return gram(self.kernel, X, self.anchors) @ self.coefficients

    def weights(self, X) -> np.ndarray:
        return softmax_rows(self.logits(X))

    def predict(self, X, model_values) -> np.ndarray:
        values = np.atleast_2d(np.asarray(model_values, dtype=float))
        return np.sum(self.weights(X) * values, axis=1)


def _softmax_objective(B: np.ndarray, L: np.ndarray, values: np.ndarray, targets: np.ndarray,
                       a: float) -> Tuple[float, np.ndarray, np.ndarray]:
    weights = softmax_rows(L @ B)
    aggregate = np.sum(weights * values, axis=1)
    residuals = aggregate - targets
    return float(residuals @ residuals + a * np.sum(B * B)), residuals, weights


def fit_meea_softmax(s: ErrorSamples, kernel: KernelSpec, reg: float, iters: int = 200) -> SoftmaxMeea:
    """
    Fit softmax-constrained MEEA by Gauss-Newton.

    The logits are whitened as nu_k = L beta_k on the samples (L the Cholesky factor
    of the jittered Gram matrix), so the penalty is reg N |B|_F^2. Starts from
    uniform weights.

    Args:
        s: Training samples
        kernel: Kernel on the inputs
        reg: Per-sample ridge strength on the logits
        iters: Maximum Gauss-Newton iterations

    Returns:
        SoftmaxMeea with the objective history
    """
    if iters < 1:
        raise InvalidInput(f"iters must be at least 1, got {iters}")
    N, n = s.n_samples, s.n_models
    K = gram(kernel, s.inputs)
    try:
        L = scipy.linalg.cholesky(K + SOFTMAX_JITTER * np.trace(K) / N * np.eye(N), lower=True)
    except np.linalg.LinAlgError as e:
        raise FitFailed(f"Gram matrix could not be factorized: {e}") from e
    a = reg * N
    values, targets = s.model_values, s.targets

    B = np.zeros((N, n))
    value, residuals, weights = _softmax_objective(B, L, values, targets, a)
    history = [value]
    for iteration in range(iters):
        aggregate = np.sum(weights * values, axis=1)
        # d r_i / d nu_k(x^i) = u_ik (M_ik - M_A(x^i))
        sensitivities = weights * (values - aggregate[:, None])
        # Parameter order: beta flattened column-major, model k occupies block k
        jacobian = np.hstack([sensitivities[:, [k]] * L for k in range(n)])
        theta = B.reshape(-1, order='F')
        gradient = jacobian.T @ residuals + a * theta
        normal = jacobian.T @ jacobian + (a + 1e-12) * np.eye(N * n)
        try:
            step = -scipy.linalg.solve(normal, gradient, assume_a='pos')
        except (np.linalg.LinAlgError, ValueError):
            step = -np.linalg.lstsq(normal, gradient, rcond=None)[0]

        predicted = -float(gradient @ step)
        if predicted <= 1e-13 * max(value, 1e-300):
            break

        def evaluate(t):
            candidate = (theta + t * step).reshape(N, n, order='F')
            new_value, new_residuals, new_weights = _softmax_objective(candidate, L, values, targets, a)
            return new_value, (candidate, new_residuals, new_weights)

        accepted = halving_search(evaluate, value, "softmax MEEA step")
        if accepted is None:
            break
        _, new_value, (B, residuals, weights) = accepted
        decrease = value - new_value
        value = new_value
        history.append(value)
        logger.debug("softmax MEEA iteration %d: objective %.6g", iteration, value)
        if decrease <= 1e-12 * max(value, 1e-300):
            break

    coefficients = scipy.linalg.solve_triangular(L.T, B, lower=False)
    return SoftmaxMeea(s.inputs, coefficients, kernel, reg, tuple(history))
