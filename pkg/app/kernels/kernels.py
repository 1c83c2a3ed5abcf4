"""
Scalar kernels and Gram assembly.

Three stationary families are supported, all normalized so k(u, u) = 1:

    matern32  (1 + sqrt(3) r / l) exp(-sqrt(3) r / l)
    rbf       exp(-r^2 / (2 l^2))
    expsin2   exp(-2 sin^2(pi |x - y|) / l^2)      (period 1, scalar inputs)
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from app.utils.exceptions import InvalidInput

logger = logging.getLogger(__name__)

KERNEL_FAMILIES = ('matern32', 'rbf', 'expsin2')
# Kernel values below this are flushed to exactly zero
KERNEL_FLUSH = 1e-300
SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus lengthscale (same units as the input coordinates)."""

    family: str
    lengthscale: float = 1.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise InvalidInput(f"unknown kernel family '{self.family}', expected one of {KERNEL_FAMILIES}")
        if not np.isfinite(self.lengthscale) or self.lengthscale <= 0:
            raise InvalidInput(f"lengthscale must be positive, got {self.lengthscale}")

    def with_lengthscale(self, lengthscale: float) -> "KernelSpec":
        return KernelSpec(self.family, float(lengthscale))


def as_points(X) -> np.ndarray:
    """Coerce a list of feature vectors (or a 1-D array of scalars) to an (N, d) array."""
    points = np.asarray(X, dtype=float)
    if points.ndim == 0:
        points = points.reshape(1, 1)
    elif points.ndim == 1:
        points = points[:, None]
    elif points.ndim != 2:
        raise InvalidInput(f"features must be at most 2-D, got shape {points.shape}")
    return points


def _profile(spec: KernelSpec, distances: np.ndarray) -> np.ndarray:
    scaled = distances / spec.lengthscale
    if spec.family == 'matern32':
        values = (1.0 + SQRT3 * scaled) * np.exp(-SQRT3 * scaled)
    elif spec.family == 'rbf':
        values = np.exp(-0.5 * scaled ** 2)
    else:
        values = np.exp(-2.0 * np.sin(np.pi * distances) ** 2 / spec.lengthscale ** 2)
    values[values < KERNEL_FLUSH] = 0.0
    return values


def gram(spec: KernelSpec, X, X2=None) -> np.ndarray:
    """
    Cross-Gram matrix with entry (i, j) = k(X[i], X2[j]).

    Args:
        spec: Kernel to evaluate
        X: N feature vectors
        X2: M feature vectors; defaults to X

    Returns:
        (N, M) matrix, symmetric PSD when X2 is X
    """
    A = as_points(X)
    B = A if X2 is None else as_points(X2)
    if A.shape[1] != B.shape[1]:
        raise InvalidInput(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if spec.family == 'expsin2' and A.shape[1] != 1:
        raise InvalidInput("expsin2 kernel accepts scalar inputs only")
    distances = cdist(A, B, metric='euclidean')
    K = _profile(spec, distances)
    if X2 is None:
        K = 0.5 * (K + K.T)
    return K


def kernel_eval(spec: KernelSpec, u, v) -> float:
    """Evaluate k(u, v) for two single feature vectors (or two scalars)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if u.ndim != 1 or u.shape != v.shape:
        raise InvalidInput(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(gram(spec, u[None, :], v[None, :])[0, 0])


def median_lengthscale(X) -> float:
    """Median pairwise Euclidean distance of the rows of X (falls back to 1.0)."""
    points = as_points(X)
    if len(points) < 2:
        return 1.0
    distances = pdist(points)
    distances = distances[distances > 0]
    if len(distances) == 0:
        logger.debug("all points coincide, using unit lengthscale")
        return 1.0
    return float(np.median(distances))
