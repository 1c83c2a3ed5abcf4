"""
Poisson problem -Laplace(u) = f on the unit square with zero Dirichlet boundary.

Random solution/source pairs and the deterministic solvers of the Laplace bank:
a uniform 5-point finite difference scheme, two graded variants refined on one
side of x = 0.4, and a sine-transform spectral solver. The GP collocation solver
lives in ``gp_solver``.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from scipy.fft import dstn, idstn
from scipy.interpolate import CubicSpline

from app.pde.grid import GridFunction, SolverResult
from app.utils.exceptions import InvalidInput

logger = logging.getLogger(__name__)

GRADINGS = ('uniform', 'left_dense', 'right_dense')
# Graded grids switch between finer and coarser than uniform at this x
GRADING_THRESHOLD = 0.4
# Scale of the node-density perturbation; times max |g| = 0.4 it must stay below 1
GRADING_STRENGTH = 1.5
# Slope b of the density shape (t - x)(1 - b x), chosen so the shape integrates to zero over [0, 1]
GRADING_SHAPE_SLOPE = (GRADING_THRESHOLD - 0.5) / (GRADING_THRESHOLD / 2.0 - 1.0 / 3.0)
# Finite-difference spacing for f, relative to the grid spacing
SOURCE_REFINEMENT = 4
MIN_GRID_SIZE = 16


@dataclass(frozen=True)
class LaplaceParams:
    """
    Parameters of a random solution
    u(x, y) = -sin(pi x) sin(pi y) sin(f_max exp(-(z - mu)^T R (z - mu))).
    """

    f_max: float
    mu: Tuple[float, float]
    R: np.ndarray

    @classmethod
    def draw(cls, rng: np.random.Generator, f_max: float = None) -> "LaplaceParams":
        """f_max ~ U[1, 10], mu ~ U[0.2, 0.8]^2, R = Q Diag(U[5, 50]) Q^T with Q a random rotation."""
        drawn_f_max = rng.uniform(1.0, 10.0)
        mu = tuple(rng.uniform(0.2, 0.8, size=2))
        angle = rng.uniform(0.0, 2.0 * np.pi)
        eigenvalues = rng.uniform(5.0, 50.0, size=2)
        Q = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        R = Q @ np.diag(eigenvalues) @ Q.T
        return cls(drawn_f_max if f_max is None else float(f_max), mu, R)

    def solution(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        dx, dy = x - self.mu[0], y - self.mu[1]
        quadratic = self.R[0, 0] * dx * dx + 2.0 * self.R[0, 1] * dx * dy + self.R[1, 1] * dy * dy
        return -np.sin(np.pi * x) * np.sin(np.pi * y) * np.sin(self.f_max * np.exp(-quadratic))


@dataclass(frozen=True)
class LaplaceSample:
    f: GridFunction
    u: GridFunction
    params: LaplaceParams


def unit_square_grid(nx: int, ny: int) -> GridFunction:
    return GridFunction(np.zeros((ny, nx)))


def negative_laplacian(u_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                       x: np.ndarray, y: np.ndarray, h: float) -> np.ndarray:
    """
    -Laplace(u) at the points (x, y) by fourth-order central differences of spacing h.

    Args:
        u_fn: Vectorized function of (x, y)
        x, y: Evaluation points, any matching shapes
        h: Difference spacing

    Returns:
        Array shaped like x
    """
    stencil = ((-2, -1.0), (-1, 16.0), (0, -30.0), (1, 16.0), (2, -1.0))
    second_x = sum(w * u_fn(x + k * h, y) for k, w in stencil)
    second_y = sum(w * u_fn(x, y + k * h) for k, w in stencil)
    return -(second_x + second_y) / (12.0 * h * h)


def laplace_pair(params: LaplaceParams, nx: int, ny: int) -> LaplaceSample:
    """Evaluate the solution and its source for given parameters on an nx x ny grid."""
    if nx < MIN_GRID_SIZE or ny < MIN_GRID_SIZE:
        raise InvalidInput(f"Laplace grids need at least {MIN_GRID_SIZE} nodes per side, got {nx}x{ny}")
    grid = unit_square_grid(nx, ny)
    X, Y = grid.mesh()
    u = params.solution(X, Y)
    u[0, :] = u[-1, :] = 0.0
    u[:, 0] = u[:, -1] = 0.0
    h = min(grid.spacing) / SOURCE_REFINEMENT
    f = negative_laplacian(params.solution, X, Y, h)
    return LaplaceSample(grid.with_values(f), grid.with_values(u), params)


def sample_laplace_pair(rng: np.random.Generator, nx: int = 64, ny: int = 64) -> LaplaceSample:
    """Draw random parameters and return the (f, u) pair on the grid."""
    return laplace_pair(LaplaceParams.draw(rng), nx, ny)


def _density_shape(x: np.ndarray) -> np.ndarray:
    t = GRADING_THRESHOLD
    b = GRADING_SHAPE_SLOPE
    return (t - x) * (1.0 - b * x)


def _density_primitive(x: np.ndarray) -> np.ndarray:
    t = GRADING_THRESHOLD
    b = GRADING_SHAPE_SLOPE
    return t * x - (1.0 + b * t) * x ** 2 / 2.0 + b * x ** 3 / 3.0


def graded_nodes(n: int, grading: str) -> np.ndarray:
    """
    Nodes in [0, 1], uniform or graded around x = GRADING_THRESHOLD.

    The node density is 1 + s g(x) with g > 0 left of the threshold and g < 0 right
    of it, so 'left_dense' spacing is below 1 / (n - 1) for x < 0.4 and above it
    for x > 0.4; 'right_dense' uses -s and is the other way round. The nodes are
    the inverse of the cumulative density at equispaced levels.
    """
    xi = np.linspace(0.0, 1.0, n)
    if grading == 'uniform':
        return xi
    if grading not in GRADINGS:
        raise InvalidInput(f"unknown grading '{grading}', expected one of {GRADINGS}")
    strength = GRADING_STRENGTH if grading == 'left_dense' else -GRADING_STRENGTH

    def cumulative(x):
        return x + strength * _density_primitive(x)

    table = np.linspace(0.0, 1.0, 4097)
    x = np.interp(xi, cumulative(table), table)
    for _ in range(3):
        x = x - (cumulative(x) - xi) / (1.0 + strength * _density_shape(x))
    x[0], x[-1] = 0.0, 1.0
    return x


def second_difference(nodes: np.ndarray) -> scipy.sparse.csr_matrix:
    """Three-point second derivative on the interior nodes of a (possibly non-uniform) 1-D grid, zero Dirichlet ends."""
    h = np.diff(nodes)
    left, right = h[:-1], h[1:]
    lower = 2.0 / (left * (left + right))
    upper = 2.0 / (right * (left + right))
    diagonal = -(lower + upper)
    return scipy.sparse.diags([lower[1:], diagonal, upper[:-1]], [-1, 0, 1], format='csr')


def _dirichlet_solve(f_interior: np.ndarray, x_nodes: np.ndarray, y_nodes: np.ndarray) -> np.ndarray:
    Dx = second_difference(x_nodes)
    Dy = second_difference(y_nodes)
    nx_in, ny_in = Dx.shape[0], Dy.shape[0]
    operator = -(scipy.sparse.kron(scipy.sparse.identity(ny_in), Dx)
                 + scipy.sparse.kron(Dy, scipy.sparse.identity(nx_in)))
    solution = scipy.sparse.linalg.spsolve(operator.tocsc(), f_interior.ravel())
    return np.asarray(solution).reshape(ny_in, nx_in)


def laplace_fdm(f: GridFunction, grading: str = 'uniform') -> SolverResult:
    """
    Five-point finite differences with zero Dirichlet boundary.

    Graded variants place the x nodes on a clustered grid; the source is moved there
    and the solution back to the uniform grid with cubic splines along x.

    Args:
        f: Source on the uniform unit-square grid
        grading: 'uniform', 'left_dense' or 'right_dense'

    Returns:
        SolverResult with solver_id 'fdm' or 'fdm_<grading>'
    """
    solver_id = 'fdm' if grading == 'uniform' else f'fdm_{grading}'
    x_uniform, y_nodes = f.x, f.y
    x_nodes = graded_nodes(f.nx, grading)
    values = f.values
    if grading != 'uniform':
        values = CubicSpline(x_uniform, values, axis=1)(x_nodes)

    try:
        with np.errstate(all='ignore'):
            interior = _dirichlet_solve(values[1:-1, 1:-1], x_nodes, y_nodes)
    except (RuntimeError, ValueError, np.linalg.LinAlgError) as e:
        logger.warning("%s solve failed: %s", solver_id, e)
        return SolverResult.from_values(np.full(f.values.shape, np.nan), solver_id, f)

    u = np.zeros_like(values)
    u[1:-1, 1:-1] = interior
    if grading != 'uniform':
        u = CubicSpline(x_nodes, u, axis=1)(x_uniform)
        u[:, 0] = u[:, -1] = 0.0
    return SolverResult.from_values(u, solver_id, f)


def laplace_spectral(f: GridFunction) -> SolverResult:
    """Sine-transform solver: exact for sources in the span of sin(k pi x) sin(l pi y) resolved by the grid."""
    interior = f.values[1:-1, 1:-1]
    ny_in, nx_in = interior.shape
    k = np.arange(1, nx_in + 1)
    l = np.arange(1, ny_in + 1)
    eigenvalues = np.pi ** 2 * (k[None, :] ** 2 + l[:, None] ** 2)
    coefficients = dstn(interior, type=1) / eigenvalues
    u = np.zeros_like(f.values)
    u[1:-1, 1:-1] = idstn(coefficients, type=1)
    return SolverResult.from_values(u, 'spectral', f)
