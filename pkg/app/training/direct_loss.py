"""
Direct minimization of the empirical aggregate variance.

For independent errors the per-sample covariance is A_i = Diag((e^i_k)^2), and
the weights u(x) = softmax(l(x)) with kernel logits l_k(x) = sum_j c_jk k(x, x^j)
minimize

    sum_i u(x^i)^T A_i u(x^i) + reg |C|_F^2

by gradient descent with backtracking.
"""

import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from app.aggregation.weights import softmax_rows
from app.kernels.kernels import KernelSpec, gram
from app.training.line_search import halving_search
from app.training.samples import ErrorSamples
from app.utils.exceptions import InvalidInput

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-10


@dataclass(frozen=True)
class DirectMvaAggregator:
    anchors: np.ndarray
    coefficients: np.ndarray
    kernel: KernelSpec
    reg_strength: float
    history: Tuple[float, ...] = field(default_factory=tuple)

    def weights(self, X) -> np.ndarray:
        return softmax_rows(gram(self.kernel, X, self.anchors) @ self.coefficients)

    def predict(self, X, model_values) -> np.ndarray:
        values = np.atleast_2d(np.asarray(model_values, dtype=float))
        return np.sum(self.weights(X) * values, axis=1)


def direct_objective(C: np.ndarray, K: np.ndarray, squared_errors: np.ndarray, reg: float) -> float:
    u = softmax_rows(K @ C)
    return float(np.sum(u * u * squared_errors) + reg * np.sum(C * C))


def _gradient(C: np.ndarray, K: np.ndarray, squared_errors: np.ndarray, reg: float) -> np.ndarray:
    u = softmax_rows(K @ C)
    weighted = u * u * squared_errors
    # d/dl_k (u^T A u) = 2 u_k^2 a_k - 2 u_k sum_m u_m^2 a_m
    logit_gradient = 2.0 * weighted - 2.0 * u * weighted.sum(axis=1, keepdims=True)
    return K.T @ logit_gradient + 2.0 * reg * C


def fit_direct_mva(s: ErrorSamples, kernel: KernelSpec, reg: float, steps: int = 500,
                   lr: float = 1.0) -> DirectMvaAggregator:
    """
    Fit softmax weight functions by descending the empirical aggregate variance.

    Args:
        s: Validation samples
        kernel: Kernel on the inputs
        reg: Penalty on the squared Frobenius norm of the coefficients
        steps: Maximum gradient steps
        lr: Initial step length of every backtracking search

    Returns:
        DirectMvaAggregator starting from (and never worse than) uniform weights
    """
    if steps < 0 or lr <= 0:
        raise InvalidInput(f"need steps >= 0 and lr > 0, got {steps} and {lr}")
    K = gram(kernel, s.inputs)
    C = np.zeros((s.n_samples, s.n_models))
    squared_errors = s.errors ** 2
    value = direct_objective(C, K, squared_errors, reg)
    history = [value]

    if s.n_models == 1:
        return DirectMvaAggregator(s.inputs, C, kernel, reg, tuple(history))

    for step in range(steps):
        gradient = _gradient(C, K, squared_errors, reg)
        norm_sq = float(np.sum(gradient * gradient))
        if norm_sq <= GRADIENT_TOLERANCE ** 2 * max(1.0, value ** 2):
            break

        def evaluate(t):
            candidate = C - t * gradient
            return direct_objective(candidate, K, squared_errors, reg), candidate

        accepted = halving_search(evaluate, value, f"direct variance loss at step {step}", t0=lr)
        if accepted is None:
            break
        _, new_value, C = accepted
        decrease = value - new_value
        value = new_value
        history.append(value)
        if decrease <= 1e-15 * max(value, 1e-300):
            break

    logger.info("direct variance fit: objective %.6g -> %.6g in %d steps", history[0], history[-1], len(history) - 1)
    return DirectMvaAggregator(s.inputs, C, kernel, reg, tuple(history))
