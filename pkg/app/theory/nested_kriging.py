"""
Exact minimal-error aggregation of GP collocation solvers.

Each model k conditions the prior xi ~ GP(0, k) on its own collocation set
phi_k. Under that prior the second moments needed by MEA are known in closed
form at every x:

    E[u_k(x) u_l(x)] = K(x, phi_k) K(phi_k, phi_k)^-1 K(phi_k, phi_l) K(phi_l, phi_l)^-1 K(phi_l, x)
    E[xi(x) u_k(x)]  = K(x, phi_k) K(phi_k, phi_k)^-1 K(phi_k, x)

so the aggregate C(x)^-1 gamma(x) needs no validation data.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from app.aggregation.weights import SecondMoments, mea_weights
from app.pde.gp_solver import GpCollocation, boundary_points, cross_covariance, measurement_cross_gram
from app.pde.grid import GridFunction
from app.utils.exceptions import InvalidInput, SingularCovariance

logger = logging.getLogger(__name__)

DOMAIN = (-1.0, 1.0, -1.0, 1.0)
DEFAULT_INTERIOR_POINTS = 20
DEFAULT_BOUNDARY_POINTS = 12
# Points whose model-correlation matrix is worse conditioned fall back to the uniform average
MAX_CONDITION = 1e12

CollocationSet = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class NestedKrigingResult:
    """
    Attributes:
        aggregate: Aggregated field
        model_fields: Field of every collocation model
        weights: (ny * nx, n) MEA weights, row-major over the grid
        fallback_points: Grid points that used the uniform average
    """

    aggregate: GridFunction
    model_fields: List[GridFunction]
    weights: np.ndarray
    fallback_points: int


def random_collocation_sets(rng: np.random.Generator, n_models: int,
                            n_interior: int = DEFAULT_INTERIOR_POINTS,
                            n_boundary: int = DEFAULT_BOUNDARY_POINTS) -> List[CollocationSet]:
    """Uniform interior points and a randomly shifted boundary set per model, on [-1, 1]^2."""
    perimeter = boundary_points(4 * n_boundary, DOMAIN)
    sets = []
    for _ in range(n_models):
        interior = rng.uniform(-1.0, 1.0, size=(n_interior, 2))
        start = rng.integers(4)
        sets.append((interior, perimeter[start::4][:n_boundary]))
    return sets


def model_correlations(collocations: Sequence[GpCollocation], points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Prior second moments of the models at each point.

    Returns:
        (C of shape (P, n, n), gamma of shape (P, n))
    """
    representers = [c.representer(points) for c in collocations]
    n = len(collocations)
    C = np.empty((len(points), n, n))
    gamma = np.empty((len(points), n))
    for k, (ck, rk) in enumerate(zip(collocations, representers)):
        cross = cross_covariance(points, ck.interior, ck.boundary, ck.lengthscale)
        gamma[:, k] = np.sum(rk * cross, axis=1)
        for l in range(k, n):
            cl = collocations[l]
            K_kl = measurement_cross_gram(ck.interior, ck.boundary, cl.interior, cl.boundary, ck.lengthscale)
            C[:, k, l] = np.sum((rk @ K_kl) * representers[l], axis=1)
            C[:, l, k] = C[:, k, l]
    return C, gamma


def nested_kriging_mea(colloc_sets: Sequence[CollocationSet], lengthscale: float,
                       f: Callable[[np.ndarray, np.ndarray], np.ndarray], grid: GridFunction,
                       g: Callable[[np.ndarray, np.ndarray], np.ndarray] = None) -> NestedKrigingResult:
    """
    Aggregate GP collocation models with their exact prior correlations.

    Args:
        colloc_sets: (interior, boundary) point arrays per model
        lengthscale: RBF lengthscale shared by all models
        f: Source of -Laplace(u) = f, vectorized in (x, y)
        grid: Evaluation grid
        g: Boundary data, zero when omitted

    Returns:
        NestedKrigingResult
    """
    if len(colloc_sets) < 2:
        raise InvalidInput(f"need at least two models, got {len(colloc_sets)}")
    X, Y = grid.mesh()
    points = np.column_stack([X.ravel(), Y.ravel()])
    collocations = [GpCollocation.build(interior, boundary, lengthscale) for interior, boundary in colloc_sets]

    model_values = np.empty((len(points), len(collocations)))
    for k, c in enumerate(collocations):
        f_values = f(c.interior[:, 0], c.interior[:, 1])
        g_values = None if g is None else g(c.boundary[:, 0], c.boundary[:, 1])
        model_values[:, k] = c.mean(points, f_values, g_values)

    C, gamma = model_correlations(collocations, points)
    n = len(collocations)
    weights = np.full((len(points), n), 1.0 / n)
    with np.errstate(all='ignore'):
        conditions = np.linalg.cond(C)
    fallback = 0
    for p in range(len(points)):
        if not np.isfinite(conditions[p]) or conditions[p] > MAX_CONDITION:
            fallback += 1
            continue
        try:
            weights[p] = mea_weights(SecondMoments(C[p], gamma[p]))
        except SingularCovariance:
            fallback += 1
    if fallback:
        logger.info("nested kriging: %d of %d points fell back to the uniform average", fallback, len(points))

    shape = grid.values.shape
    aggregate = np.sum(weights * model_values, axis=1).reshape(shape)
    fields = [grid.with_values(model_values[:, k].reshape(shape)) for k in range(n)]
    return NestedKrigingResult(grid.with_values(aggregate), fields, weights, fallback)
