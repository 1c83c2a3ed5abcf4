"""
Grid functions, solver results and the MEVA-GRID text format.

A GridFunction stores values as a (ny, nx) array: row r holds the second axis
coordinate y_r (or time t_r for space-time fields), column c the x coordinate
x_c. Flattening is row-major, matching the file format.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from app.utils.exceptions import InvalidInput, OutputError, ParseError

logger = logging.getLogger(__name__)

GRID_MAGIC = 'MEVA-GRID'
GRID_VERSION = 1
# Clamp applied to solver output; anything beyond it marks the run as diverged
DIVERGENCE_BOUND = 1e6


@dataclass(frozen=True)
class GridFunction:
    """
    Discretized scalar field on an axis-aligned box.

    Attributes:
        values: (ny, nx) array
        domain: (x_min, x_max, y_min, y_max)
        periodic: x is periodic with nodes x_c = x_min + c (x_max - x_min) / nx;
            otherwise nodes include both ends, x_c = x_min + c (x_max - x_min) / (nx - 1)
    """

    values: np.ndarray
    domain: Tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    periodic: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2 or values.size == 0:
            raise InvalidInput(f"grid values must be a non-empty 2-D array, got shape {values.shape}")
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'domain', tuple(float(v) for v in self.domain))

    @property
    def ny(self) -> int:
        return self.values.shape[0]

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def x(self) -> np.ndarray:
        x_min, x_max = self.domain[0], self.domain[1]
        if self.periodic:
            return x_min + (x_max - x_min) * np.arange(self.nx) / self.nx
        return np.linspace(x_min, x_max, self.nx)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.domain[2], self.domain[3], self.ny) if self.ny > 1 else np.array([self.domain[2]])

    @property
    def spacing(self) -> Tuple[float, float]:
        """(dx, dy); dy is 0 for a single row."""
        dx = self.x[1] - self.x[0] if self.nx > 1 else 0.0
        dy = self.y[1] - self.y[0] if self.ny > 1 else 0.0
        return float(dx), float(dy)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays of shape (ny, nx)."""
        return np.meshgrid(self.x, self.y)

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(values, self.domain, self.periodic)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


@dataclass(frozen=True)
class SolverResult:
    """Output of one solver run; ``diverged`` is set iff the raw values were non-finite or exceeded the bound."""

    field: GridFunction
    diverged: bool
    solver_id: str

    @classmethod
    def from_values(cls, values: np.ndarray, solver_id: str, like: GridFunction) -> "SolverResult":
        """Clamp raw solver values (NaN -> bound, +-inf and overflow -> +-bound) and flag divergence."""
        raw = np.asarray(values, dtype=float)
        with np.errstate(invalid='ignore'):
            diverged = bool(np.any(~np.isfinite(raw)) or np.any(np.abs(raw) > DIVERGENCE_BOUND))
        if diverged:
            logger.debug("solver %s diverged", solver_id)
            raw = np.nan_to_num(raw, nan=DIVERGENCE_BOUND, posinf=DIVERGENCE_BOUND, neginf=-DIVERGENCE_BOUND)
            raw = np.clip(raw, -DIVERGENCE_BOUND, DIVERGENCE_BOUND)
        return cls(like.with_values(raw.reshape(like.values.shape)), diverged, solver_id)


def write_grid(path: Union[str, Path], grid: GridFunction):
    """
    Write a grid in MEVA-GRID format: header ``MEVA-GRID 1 <nx> <ny>`` followed by
    nx * ny values, one grid row per line, 17 significant digits.
    """
    path = Path(path)
    try:
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(f"{GRID_MAGIC} {GRID_VERSION} {grid.nx} {grid.ny}\n")
            np.savetxt(f, grid.values, fmt='%.17g', delimiter=' ')
    except OSError as e:
        raise OutputError(f"could not write grid to {path}: {e}") from e


def read_grid(path: Union[str, Path], domain: Tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0),
              periodic: bool = False) -> GridFunction:
    """
    Read a MEVA-GRID file back into a GridFunction.

    The header carries only the sizes, so the domain and the periodic flag are not
    stored in the file; pass the ones the grid was written with (a Burgers field
    needs periodic=True) or the result lies on the non-periodic unit square.
    """
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        tokens = f.read().split()
    if len(tokens) < 4 or tokens[0] != GRID_MAGIC:
        raise ParseError(f"{path} is not a {GRID_MAGIC} file", row=0)
    try:
        version, nx, ny = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as e:
        raise ParseError(f"bad {GRID_MAGIC} header in {path}", row=0) from e
    if version != GRID_VERSION or nx < 1 or ny < 1:
        raise ParseError(f"unsupported header in {path}: version {version}, size {nx}x{ny}", row=0)
    body = tokens[4:]
    if len(body) != nx * ny:
        raise ParseError(f"{path} holds {len(body)} values, header promises {nx * ny}")
    try:
        values = np.array([float(token) for token in body])
    except ValueError as e:
        raise ParseError(f"non-numeric value in {path}: {e}") from e
    return GridFunction(values.reshape(ny, nx), domain, periodic)
