"""
Gaussian-process collocation for -Laplace(u) = f with Dirichlet data.

The prior xi ~ GP(0, k) uses the RBF kernel k = exp(-r^2 / (2 l^2)) in two
dimensions. Measurements are phi = (-Laplace delta_{X_i}, delta_{X^b_j}) and the
estimator is the conditional mean

    u(x) = K(x, phi) K(phi, phi)^{-1} (f(X); g(X^b)).

Kernel entries with the Laplacian applied to one or both arguments have closed
forms for the RBF family, so no differentiation happens numerically.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from app.pde.grid import GridFunction, SolverResult
from app.utils.exceptions import InvalidInput, SingularCovariance

logger = logging.getLogger(__name__)

DEFAULT_LENGTHSCALE = 0.2
# Relative nugget on the diagonal of K(phi, phi)
GP_NUGGET = 1e-8
DEFAULT_BOUNDARY_POINTS = 40


def rbf_value(r2: np.ndarray, lengthscale: float) -> np.ndarray:
    return np.exp(-r2 / (2.0 * lengthscale ** 2))


def rbf_laplacian(r2: np.ndarray, lengthscale: float) -> np.ndarray:
    """Laplace_1 k(x, y) in two dimensions."""
    l2 = lengthscale ** 2
    return rbf_value(r2, lengthscale) * (r2 / l2 ** 2 - 2.0 / l2)


def rbf_bilaplacian(r2: np.ndarray, lengthscale: float) -> np.ndarray:
    """Laplace_1 Laplace_2 k(x, y) in two dimensions."""
    l2 = lengthscale ** 2
    return rbf_value(r2, lengthscale) * (r2 ** 2 / l2 ** 4 - 8.0 * r2 / l2 ** 3 + 8.0 / l2 ** 2)


def boundary_points(n: int, box=(0.0, 1.0, 0.0, 1.0)) -> np.ndarray:
    """n points equally spaced (by arc length) along the boundary of the box."""
    x_min, x_max, y_min, y_max = box
    width, height = x_max - x_min, y_max - y_min
    s = np.arange(n) * 2.0 * (width + height) / n
    points = np.empty((n, 2))
    for i, t in enumerate(s):
        if t < width:
            points[i] = (x_min + t, y_min)
        elif t < width + height:
            points[i] = (x_max, y_min + t - width)
        elif t < 2 * width + height:
            points[i] = (x_max - (t - width - height), y_max)
        else:
            points[i] = (x_min, y_max - (t - 2 * width - height))
    return points


def measurement_cross_gram(interior_a: np.ndarray, boundary_a: np.ndarray, interior_b: np.ndarray,
                           boundary_b: np.ndarray, lengthscale: float) -> np.ndarray:
    """K(phi_a, phi_b) between two measurement sets, interior rows/columns first."""
    laplace_ab = -rbf_laplacian(cdist(interior_a, boundary_b, 'sqeuclidean'), lengthscale)
    laplace_ba = -rbf_laplacian(cdist(boundary_a, interior_b, 'sqeuclidean'), lengthscale)
    top = np.hstack([rbf_bilaplacian(cdist(interior_a, interior_b, 'sqeuclidean'), lengthscale), laplace_ab])
    bottom = np.hstack([laplace_ba, rbf_value(cdist(boundary_a, boundary_b, 'sqeuclidean'), lengthscale)])
    return np.vstack([top, bottom])


def measurement_gram(interior: np.ndarray, boundary: np.ndarray, lengthscale: float) -> np.ndarray:
    """K(phi, phi) for interior -Laplace measurements followed by boundary point values."""
    return measurement_cross_gram(interior, boundary, interior, boundary, lengthscale)


def cross_covariance(points: np.ndarray, interior: np.ndarray, boundary: np.ndarray,
                     lengthscale: float) -> np.ndarray:
    """K(x, phi) for every row x of ``points``."""
    return np.hstack([-rbf_laplacian(cdist(points, interior, 'sqeuclidean'), lengthscale),
                      rbf_value(cdist(points, boundary, 'sqeuclidean'), lengthscale)])


@dataclass(frozen=True)
class GpCollocation:
    """
    Conditioned GP on a fixed collocation set.

    Attributes:
        interior: (n_int, 2) points where -Laplace(u) = f is imposed
        boundary: (n_b, 2) points where u = g is imposed
        lengthscale: RBF lengthscale
        factor: Cholesky factorization of K(phi, phi) plus nugget
    """

    interior: np.ndarray
    boundary: np.ndarray
    lengthscale: float
    factor: tuple

    @classmethod
    def build(cls, interior, boundary, lengthscale: float = DEFAULT_LENGTHSCALE) -> "GpCollocation":
        interior = np.asarray(interior, dtype=float).reshape(-1, 2)
        boundary = np.asarray(boundary, dtype=float).reshape(-1, 2)
        if lengthscale <= 0:
            raise InvalidInput(f"lengthscale must be positive, got {lengthscale}")
        K = measurement_gram(interior, boundary, lengthscale)
        K = K + GP_NUGGET * np.diag(np.diag(K))
        try:
            factor = scipy.linalg.cho_factor(K, lower=True)
        except np.linalg.LinAlgError as e:
            raise SingularCovariance(f"collocation Gram matrix is not positive definite: {e}") from e
        return cls(interior, boundary, float(lengthscale), factor)

    @property
    def n_measurements(self) -> int:
        return len(self.interior) + len(self.boundary)

    def representer(self, points) -> np.ndarray:
        """K(x, phi) K(phi, phi)^{-1}, shape (n_points, n_measurements)."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        cross = cross_covariance(points, self.interior, self.boundary, self.lengthscale)
        return scipy.linalg.cho_solve(self.factor, cross.T).T

    def mean(self, points, f_values, g_values=None) -> np.ndarray:
        f_values = np.asarray(f_values, dtype=float).ravel()
        g_values = np.zeros(len(self.boundary)) if g_values is None else np.asarray(g_values, dtype=float).ravel()
        return self.representer(points) @ np.concatenate([f_values, g_values])


class GpLaplaceSolver:
    """
    GP collocation solver on a fixed grid with zero boundary data.

    The collocation set is drawn once, so the solver is the fixed linear map
    f(X) -> u(grid) and can be applied to many sources.
    """

    def __init__(self, nx: int, ny: int, n_colloc: int, lengthscale: float = DEFAULT_LENGTHSCALE,
                 rng: np.random.Generator = None, n_boundary: int = DEFAULT_BOUNDARY_POINTS):
        if n_colloc < 1 or n_boundary < 1:
            raise InvalidInput(f"need at least one interior and one boundary point, got {n_colloc} and {n_boundary}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.grid = GridFunction(np.zeros((ny, nx)))
        rows, cols = np.meshgrid(np.arange(1, ny - 1), np.arange(1, nx - 1), indexing='ij')
        candidates = np.column_stack([rows.ravel(), cols.ravel()])
        chosen = rng.choice(len(candidates), size=min(n_colloc, len(candidates)), replace=False)
        self.indices = candidates[np.sort(chosen)]
        X, Y = self.grid.mesh()
        interior = np.column_stack([X[self.indices[:, 0], self.indices[:, 1]],
                                    Y[self.indices[:, 0], self.indices[:, 1]]])
        self.failed = False
        self.operator = None
        try:
            collocation = GpCollocation.build(interior, boundary_points(n_boundary), lengthscale)
        except SingularCovariance as e:
            logger.warning("GP collocation solver unusable: %s", e)
            self.failed = True
            return
        representer = collocation.representer(np.column_stack([X.ravel(), Y.ravel()]))
        # Zero boundary data: only the interior columns act on the source
        self.operator = representer[:, :len(interior)]
        logger.debug("GP solver ready: %d interior, %d boundary points", len(interior), n_boundary)

    def __call__(self, f: GridFunction) -> SolverResult:
        if f.values.shape != self.grid.values.shape:
            raise InvalidInput(f"source shape {f.values.shape} does not match solver grid {self.grid.values.shape}")
        if self.failed:
            return SolverResult.from_values(np.full(f.values.shape, np.nan), 'gp', f)
        data = f.values[self.indices[:, 0], self.indices[:, 1]]
        return SolverResult.from_values((self.operator @ data).reshape(f.values.shape), 'gp', f)


def laplace_gp(f: GridFunction, n_colloc: int = 400, lengthscale: float = DEFAULT_LENGTHSCALE,
               rng: np.random.Generator = None) -> SolverResult:
    """One-off GP collocation solve of -Laplace(u) = f with u = 0 on the boundary."""
    return GpLaplaceSolver(f.nx, f.ny, n_colloc, lengthscale, rng)(f)
