"""
Synthetic aggregation problems with exactly known optimal weights.

A case fixes the law of (Y, M) with M = Y 1 + eps Z: Y ~ N(0, var_y), Cov(Z) = A
(Frobenius norm 1) and E[Y Z] = b. With s = 1^T A^-1 1, t = b^T A^-1 1 and
u = b^T A^-1 b the optimal unconstrained weights C^-1 gamma split as

    alpha* = mix * alpha_V + (1 - mix) * alpha_R,

alpha_V = A^-1 1 / s the minimum-variance weights, alpha_R = A^-1 b / (eps + t),
mix = s (var_y - u) / (s (var_y - u) + (eps + t)^2), with losses
L(alpha_V) = eps^2 / s and L(alpha*) = mix * eps^2 / s.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from app.aggregation.weights import cholesky_solve, mva_weights
from app.utils.exceptions import DegenerateCase, InvalidInput, SingularCovariance

logger = logging.getLogger(__name__)

# Estimates of A with a larger condition number count as failed trials
MAX_CONDITION = 1e12
DEGENERACY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class TheoremCase:
    A: np.ndarray
    b: np.ndarray
    var_y: float
    eps: float

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        n = len(b)
        if A.shape != (n, n):
            raise InvalidInput(f"A has shape {A.shape}, b has length {n}")
        if not np.allclose(A, A.T, atol=1e-12):
            raise InvalidInput("A must be symmetric")
        if abs(np.linalg.norm(A, 'fro') - 1.0) > 1e-10:
            raise InvalidInput(f"A must have Frobenius norm 1, got {np.linalg.norm(A, 'fro')}")
        if self.var_y <= 0 or self.eps <= 0:
            raise InvalidInput(f"var_y and eps must be positive, got {self.var_y} and {self.eps}")
        residual = A - np.outer(b, b) / self.var_y
        if np.linalg.eigvalsh(0.5 * (residual + residual.T)).min() < -1e-12:
            raise InvalidInput("joint covariance of (Y, Z) is not positive semidefinite")
        object.__setattr__(self, 'A', A)
        object.__setattr__(self, 'b', b)

    @property
    def n(self) -> int:
        return len(self.b)

    def second_moments(self) -> Tuple[np.ndarray, np.ndarray]:
        """C = E[M M^T] and gamma = E[Y M]."""
        ones = np.ones(self.n)
        gamma = self.var_y * ones + self.eps * self.b
        C = (np.outer(gamma, ones) + self.eps * np.outer(ones, self.b) + self.eps ** 2 * self.A)
        return 0.5 * (C + C.T), gamma


def random_case(rng: np.random.Generator, n: int = 3, eps: float = 0.1, rho: float = 0.5,
                var_y: float = 1.0, kappa: Optional[float] = None) -> TheoremCase:
    """
    Random valid case.

    A is a random SPD matrix scaled to unit Frobenius norm, b = rho sqrt(var_y) A^{1/2} w
    for a random unit w, so b^T A^-1 b = rho^2 var_y. With ``kappa`` set, b is rescaled so
    that t = kappa * eps.
    """
    if not 0.0 <= rho < 1.0:
        raise InvalidInput(f"rho must lie in [0, 1), got {rho}")
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    A = Q @ np.diag(rng.uniform(0.5, 2.0, size=n)) @ Q.T
    A = 0.5 * (A + A.T)
    A /= np.linalg.norm(A, 'fro')
    w = rng.normal(size=n)
    w /= np.linalg.norm(w)
    b = rho * np.sqrt(var_y) * (scipy.linalg.sqrtm(A).real @ w)
    if kappa is not None:
        t = float(b @ np.linalg.solve(A, np.ones(n)))
        if abs(t) < DEGENERACY_TOLERANCE:
            raise DegenerateCase("cannot rescale b: t vanished")
        b = b * (kappa * eps / t)
        if b @ np.linalg.solve(A, b) >= var_y:
            raise DegenerateCase(f"kappa={kappa} makes the joint covariance indefinite")
    return TheoremCase(A, b, var_y, eps)


def draw_case(rng: np.random.Generator, n: int = 3, eps: float = 0.1, rho: float = 0.5,
              var_y: float = 1.0, kappa: Optional[float] = None, attempts: int = 100) -> TheoremCase:
    """``random_case`` redrawn until the requested shift is attainable."""
    for _ in range(attempts):
        try:
            return random_case(rng, n, eps, rho, var_y, kappa)
        except DegenerateCase:
            continue
    raise DegenerateCase(f"no valid case with kappa={kappa} in {attempts} draws")


@dataclass(frozen=True)
class ClosedForms:
    s: float
    t: float
    u: float
    v: float
    mix_lambda: float
    alpha_star: np.ndarray
    alpha_v: np.ndarray
    alpha_r: np.ndarray
    loss_star: float
    loss_v: float


def closed_forms(case: TheoremCase) -> ClosedForms:
    """
    All closed-form quantities of a case.

    ``v`` is E[Y^2] - u, the variance of Y left unexplained by Z. Raises
    DegenerateCase when eps + t vanishes.
    """
    ones = np.ones(case.n)
    A_inv_one = np.linalg.solve(case.A, ones)
    A_inv_b = np.linalg.solve(case.A, case.b)
    s = float(ones @ A_inv_one)
    t = float(case.b @ A_inv_one)
    u = float(case.b @ A_inv_b)
    shift = case.eps + t
    if abs(s) < DEGENERACY_TOLERANCE or abs(shift) < DEGENERACY_TOLERANCE:
        raise DegenerateCase(f"degenerate case: s={s}, eps+t={shift}")
    v = case.var_y - u
    mix = s * v / (s * v + shift ** 2)
    alpha_v = A_inv_one / s
    alpha_r = A_inv_b / shift
    loss_v = case.eps ** 2 / s
    return ClosedForms(s, t, u, v, mix, mix * alpha_v + (1.0 - mix) * alpha_r, alpha_v, alpha_r,
                       mix * loss_v, loss_v)


def true_loss(alpha, case: TheoremCase) -> float:
    """E[(Y - alpha^T M)^2] = E[Y^2] - 2 alpha^T gamma + alpha^T C alpha."""
    alpha = np.asarray(alpha, dtype=float)
    C, gamma = case.second_moments()
    return float(case.var_y - 2.0 * alpha @ gamma + alpha @ C @ alpha)


def sample_case(case: TheoremCase, N: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw N joint-Gaussian observations.

    Z = (b / var_y) Y + W with W ~ N(0, A - b b^T / var_y) independent of Y.

    Returns:
        (M of shape (N, n), Y of shape (N,))
    """
    residual = case.A - np.outer(case.b, case.b) / case.var_y
    eigenvalues, vectors = np.linalg.eigh(0.5 * (residual + residual.T))
    root = vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))
    Y = rng.normal(scale=np.sqrt(case.var_y), size=N)
    W = rng.standard_normal((N, case.n)) @ root.T
    Z = np.outer(Y, case.b / case.var_y) + W
    return Y[:, None] + case.eps * Z, Y


@dataclass(frozen=True)
class EmpiricalEstimates:
    A_hat: np.ndarray
    b_hat: np.ndarray
    var_y_hat: float
    alpha_v_hat: np.ndarray
    alpha_e_hat: np.ndarray


def empirical_estimators(M: np.ndarray, Y: np.ndarray, eps: float) -> EmpiricalEstimates:
    """
    Plug-in estimates from N observations.

    A_hat = (M - Y 1^T)^T (M - Y 1^T) / (eps^2 N), alpha_v_hat the minimum-variance
    weights of A_hat and alpha_e_hat = (M^T M)^-1 M^T Y the empirical error minimizer.
    Raises SingularCovariance when A_hat or M^T M cannot be inverted reliably.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(-1)
    N, n = M.shape
    if N <= n or len(Y) != N:
        raise InvalidInput(f"need N > n matching observations, got N={N}, n={n}, {len(Y)} targets")
    Z = (M - Y[:, None]) / eps
    A_hat = Z.T @ Z / N
    if not np.isfinite(np.linalg.cond(A_hat)) or np.linalg.cond(A_hat) > MAX_CONDITION:
        raise SingularCovariance("estimated error covariance is singular")
    alpha_v_hat = np.asarray(mva_weights(0.5 * (A_hat + A_hat.T)))
    gram = M.T @ M
    alpha_e_hat = cholesky_solve(0.5 * (gram + gram.T), M.T @ Y)
    return EmpiricalEstimates(A_hat, Z.T @ Y / N, float(Y @ Y / N), alpha_v_hat, alpha_e_hat)
