"""
Aggregation of solution operators.

A dataset point is a pair (omega, f): a grid location and a source (or initial
condition). Pointwise features of that pair feed a MEVA aggregator fitted with
the sharp loss, whose weights then combine the solver fields at every grid
point of a new problem.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter

from app.aggregation.model_bank import ModelBank
from app.kernels.kernels import KernelSpec, median_lengthscale
from app.pde.grid import GridFunction, SolverResult
from app.training.meva_trainer import MevaAggregator, fit_meva_sharp
from app.training.samples import ErrorSamples
from app.utils.exceptions import EmptyBank, InvalidInput

logger = logging.getLogger(__name__)

# Largest number of dataset rows used as KRR anchors
ANCHOR_BUDGET = 2000
LOCAL_WINDOW = 3
MSE_FLOOR = 1e-300

FieldPair = Tuple[GridFunction, GridFunction]


def _broadcast_source(f: GridFunction, shape: Tuple[int, int]) -> np.ndarray:
    # A single-row input (an initial condition) is repeated along the time axis
    if f.values.shape == shape:
        return f.values
    if f.ny == 1 and f.nx == shape[1]:
        return np.broadcast_to(f.values, shape)
    raise InvalidInput(f"input of shape {f.values.shape} does not fit output grid {shape}")


def _field_stack(f: GridFunction, model_outputs: Sequence[np.ndarray]) -> np.ndarray:
    if len(model_outputs) == 0:
        raise EmptyBank("no solver outputs to featurize")
    shape = np.shape(model_outputs[0])
    fields = [_broadcast_source(f, shape)] + [np.asarray(output, dtype=float) for output in model_outputs]
    if any(field.shape != shape for field in fields[1:]):
        raise InvalidInput("solver outputs have different shapes")
    return np.stack(fields)


def featurize(omega: Tuple[int, int], f: GridFunction, model_outputs: Sequence[np.ndarray],
              grid: GridFunction) -> np.ndarray:
    """
    Feature vector of one grid point.

    Order: the coordinates of omega (x, then the row coordinate), f(omega),
    M_1(f)(omega) ... M_n(f)(omega), then the 3x3 local means of f and of each
    M_k(f) around omega. Neighbourhoods at the edge repeat the edge values.

    Args:
        omega: (row, column) index on the output grid
        f: Input field
        model_outputs: n arrays on the output grid
        grid: Output grid (supplies coordinates)

    Returns:
        Vector of length 2 + 2 (n + 1)
    """
    stack = _field_stack(f, model_outputs)
    row, col = omega
    ny, nx = stack.shape[1:]
    if not (0 <= row < ny and 0 <= col < nx):
        raise InvalidInput(f"grid index {omega} outside {ny}x{nx}")
    offsets = np.arange(LOCAL_WINDOW) - LOCAL_WINDOW // 2
    rows = np.clip(row + offsets, 0, ny - 1)
    cols = np.clip(col + offsets, 0, nx - 1)
    local = stack[:, rows[:, None], cols[None, :]].mean(axis=(1, 2))
    coordinates = [grid.x[col], grid.y[row]]
    return np.concatenate([coordinates, stack[:, row, col], local])


def featurize_grid(f: GridFunction, model_outputs: Sequence[np.ndarray], grid: GridFunction) -> np.ndarray:
    """Features of every grid point, row-major; (ny * nx, 2 + 2 (n + 1))."""
    stack = _field_stack(f, model_outputs)
    local = uniform_filter(stack, size=(1, LOCAL_WINDOW, LOCAL_WINDOW), mode='nearest')
    X, Y = grid.mesh()
    n_points = X.size
    return np.hstack([X.reshape(n_points, 1), Y.reshape(n_points, 1),
                      stack.reshape(len(stack), n_points).T, local.reshape(len(local), n_points).T])


def run_solvers(bank: ModelBank, f: GridFunction) -> Tuple[np.ndarray, List[bool], GridFunction]:
    """Run every solver of the bank on f; returns the (n, ny, nx) outputs, divergence flags and output grid."""
    if len(bank) == 0:
        raise EmptyBank("solver bank is empty")
    results: List[SolverResult] = [solver(f) for solver in bank.predictors]
    for name, result in zip(bank.names, results):
        if result.diverged:
            logger.info("solver %s diverged", name)
    outputs = np.stack([result.field.values for result in results])
    return outputs, [result.diverged for result in results], results[0].field


@dataclass(frozen=True)
class OperatorDataset:
    """
    Flattened (omega, f) dataset.

    Attributes:
        sample_ids: Index j of the training function of each row
        grid_indices: Row-major grid index i of each row
        features: (N, d) pointwise features
        model_values: (N, n) solver values
        targets: (N,) ground-truth values
        solver_ids: Solver names in column order
    """

    sample_ids: np.ndarray
    grid_indices: np.ndarray
    features: np.ndarray
    model_values: np.ndarray
    targets: np.ndarray
    solver_ids: Tuple[str, ...]

    def __post_init__(self):
        if not np.all(np.isfinite(self.features)):
            raise InvalidInput("dataset features must be finite")
        keys = self.sample_ids.astype(np.int64) * (int(self.grid_indices.max(initial=0)) + 1) + self.grid_indices
        if len(np.unique(keys)) != len(keys):
            raise InvalidInput("a (sample, grid point) pair appears twice")

    @property
    def errors(self) -> np.ndarray:
        return self.model_values - self.targets[:, None]

    def __len__(self):
        return len(self.targets)

    def to_error_samples(self) -> ErrorSamples:
        return ErrorSamples(self.features, self.model_values, self.targets)


def build_dataset(bank: ModelBank, pairs: Sequence[FieldPair], subsample: Optional[int],
                  rng: np.random.Generator, outputs: Optional[Sequence[np.ndarray]] = None) -> OperatorDataset:
    """
    Build the pointwise dataset from training pairs (f_j, u_j).

    Args:
        bank: Solvers, each mapping a GridFunction to a SolverResult
        pairs: Training inputs with their ground truth
        subsample: Grid points drawn uniformly without replacement per function;
            None (or at least the grid size) keeps the full grid
        rng: Generator for the subsampling
        outputs: Precomputed solver outputs per pair, skipping the solver runs

    Returns:
        OperatorDataset with rows ordered by function, then grid index
    """
    if not pairs:
        raise InvalidInput("no training pairs")
    blocks = {'sample_ids': [], 'grid_indices': [], 'features': [], 'model_values': [], 'targets': []}
    for j, (f, truth) in enumerate(pairs):
        solved = outputs[j] if outputs is not None else run_solvers(bank, f)[0]
        features = featurize_grid(f, solved, truth)
        n_points = truth.values.size
        if subsample is None or subsample >= n_points:
            chosen = np.arange(n_points)
        else:
            chosen = np.sort(rng.choice(n_points, size=subsample, replace=False))
        blocks['sample_ids'].append(np.full(len(chosen), j))
        blocks['grid_indices'].append(chosen)
        blocks['features'].append(features[chosen])
        blocks['model_values'].append(solved.reshape(len(solved), -1).T[chosen])
        blocks['targets'].append(truth.values.reshape(-1)[chosen])
    stacked = {key: np.concatenate(value) for key, value in blocks.items()}
    logger.info("operator dataset: %d rows from %d functions", len(stacked['targets']), len(pairs))
    return OperatorDataset(solver_ids=tuple(bank.names), **stacked)


@dataclass(frozen=True)
class OperatorAggregate:
    """Fitted operator aggregate: MEVA on standardized features plus the solver bank it weights."""

    meva: MevaAggregator
    bank: ModelBank
    feature_mean: np.ndarray
    feature_scale: np.ndarray

    def weights(self, features: np.ndarray) -> np.ndarray:
        return self.meva.weights((features - self.feature_mean) / self.feature_scale)


def fit_operator_meva(ds: OperatorDataset, bank: ModelBank, kernel: Optional[KernelSpec] = None,
                      reg: float = 1e-3, rng: Optional[np.random.Generator] = None,
                      anchor_budget: int = ANCHOR_BUDGET) -> OperatorAggregate:
    """
    Fit the per-solver log-error regressors with the sharp loss.

    Features are standardized; at most ``anchor_budget`` rows, drawn uniformly,
    become KRR anchors. Without an explicit kernel a Matern-3/2 kernel with the
    median-distance lengthscale is used.
    """
    if tuple(bank.names) != ds.solver_ids:
        raise InvalidInput(f"bank solvers {bank.names} do not match dataset columns {list(ds.solver_ids)}")
    rng = rng if rng is not None else np.random.default_rng(0)
    mean = ds.features.mean(axis=0)
    scale = ds.features.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    rows = np.arange(len(ds))
    if len(ds) > anchor_budget:
        rows = np.sort(rng.choice(len(ds), size=anchor_budget, replace=False))
        logger.info("using %d of %d dataset rows as anchors", anchor_budget, len(ds))
    standardized = (ds.features[rows] - mean) / scale
    if kernel is None:
        kernel = KernelSpec('matern32', median_lengthscale(standardized))
    samples = ErrorSamples(standardized, ds.model_values[rows], ds.targets[rows])
    meva = fit_meva_sharp(samples, kernel, reg)
    return OperatorAggregate(meva, bank, mean, scale)


def aggregate_outputs(agg: OperatorAggregate, f: GridFunction, outputs: np.ndarray,
                      grid: GridFunction) -> Tuple[GridFunction, List[GridFunction]]:
    """Aggregate precomputed solver outputs on ``grid``; returns the field and the n weight fields."""
    weights = agg.weights(featurize_grid(f, outputs, grid))
    shape = grid.values.shape
    aggregate = np.sum(weights.T.reshape(outputs.shape) * outputs, axis=0)
    weight_fields = [grid.with_values(weights[:, k].reshape(shape)) for k in range(weights.shape[1])]
    return grid.with_values(aggregate), weight_fields


def predict_operator(agg: OperatorAggregate, f: GridFunction) -> Tuple[GridFunction, List[GridFunction]]:
    """Run the bank on f and combine the fields with the fitted pointwise weights."""
    outputs, _, grid = run_solvers(agg.bank, f)
    return aggregate_outputs(agg, f, outputs, grid)


def geometric_mean_log10_mse(per_sample_mse: Sequence[float]) -> float:
    """Mean of log10 MSE over samples, entries floored at 1e-300."""
    values = np.asarray(per_sample_mse, dtype=float)
    if values.size == 0:
        raise InvalidInput("no MSE values")
    return float(np.mean(np.log10(np.maximum(values, MSE_FLOOR))))
