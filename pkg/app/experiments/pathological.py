"""
Two small one-dimensional problems on which minimal empirical error aggregation
fits the data by using models as regression features, while variance-based
aggregation keeps trusting the model that is accurate everywhere.
"""

import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np
import pandas as pd

from app.kernels.kernels import KernelSpec, median_lengthscale
from app.training.meea_trainer import fit_meea_linear, fit_meea_softmax
from app.training.meva_trainer import fit_meva_gn, fit_meva_sharp
from app.training.samples import ErrorSamples

logger = logging.getLogger(__name__)

QUANTITY_COLUMNS = ['quantity', 'value']
CURVE_POINTS = 201


@dataclass(frozen=True)
class PathologicalResult:
    """
    Attributes:
        quantities: Named scalar outcomes, written as a quantity,value table
        curves: Target, models and aggregates on a dense grid
    """

    quantities: Dict[str, float]
    curves: pd.DataFrame

    def table(self) -> pd.DataFrame:
        return pd.DataFrame(list(self.quantities.items()), columns=QUANTITY_COLUMNS)


def trick_points() -> np.ndarray:
    """Ten points spaced by a full period of cos(3 pi x), so the target is linear on them."""
    k = np.arange(5)
    return np.concatenate([0.8 - 2.0 * (4 - k) / 3.0, -0.8 + 2.0 * k / 3.0])


def linear_target(x: np.ndarray) -> np.ndarray:
    return 2.0 * x + np.cos(3.0 * np.pi * x)


def run_pathological1(rng: np.random.Generator, noise: float = 0.2, meva_reg: float = 1e-3,
                      n_grid: int = CURVE_POINTS) -> PathologicalResult:
    """
    Linear-coefficient MEEA against MEVA on the trick data.

    Y = 2x + cos(3 pi x), a good model M_G = Y + N(0, noise^2) and a bad constant
    model M_B = 1. MEEA reproduces the data exactly with M_B alone, i.e. it
    returns the least-squares line through the data.

    Args:
        rng: Source of the good model's noise
        noise: Standard deviation of the good model's error
        meva_reg: Ridge strength of the MEVA log-variance regressors
        n_grid: Points of the dense evaluation grid on [-1, 1]

    Returns:
        PathologicalResult
    """
    x = trick_points()
    y = linear_target(x)
    values = np.column_stack([y + noise * rng.normal(size=len(x)), np.ones(len(x))])
    samples = ErrorSamples(x, values, y)

    meea = fit_meea_linear(samples, reg=0.0)
    kernel = KernelSpec('matern32', median_lengthscale(x))
    meva = fit_meva_sharp(samples, kernel, meva_reg)

    grid = np.linspace(-1.0, 1.0, n_grid)
    truth = linear_target(grid)
    grid_values = np.column_stack([truth + noise * rng.normal(size=n_grid), np.ones(n_grid)])
    meea_curve = meea.predict(grid, grid_values)
    meva_curve = meva.predict(grid, grid_values)
    slope, intercept = np.polyfit(x, y, 1)
    line = slope * grid + intercept

    good_weight = np.abs(meea.weights(np.concatenate([x, grid]))[:, 0])
    quantities = {
        'meea_slope_good': float(meea.slopes[0, 0]),
        'meea_intercept_good': float(meea.intercepts[0]),
        'meea_slope_bad': float(meea.slopes[1, 0]),
        'meea_intercept_bad': float(meea.intercepts[1]),
        'meea_max_abs_weight_good': float(good_weight.max()),
        'meea_max_deviation_from_line': float(np.max(np.abs(meea_curve - line))),
        'meea_mse': float(np.mean((meea_curve - truth) ** 2)),
        'meva_mse': float(np.mean((meva_curve - truth) ** 2)),
        'good_model_mse': float(np.mean((grid_values[:, 0] - truth) ** 2)),
        'meva_mean_weight_good': float(np.mean(meva.weights(grid)[:, 0])),
    }
    logger.info("pathological1: MEEA weight on good model %.2e, MSE MEEA %.4f vs MEVA %.4f",
                quantities['meea_max_abs_weight_good'], quantities['meea_mse'], quantities['meva_mse'])
    curves = pd.DataFrame({'x': grid, 'target': truth, 'good_model': grid_values[:, 0],
                           'bad_model': grid_values[:, 1], 'meea': meea_curve, 'meva': meva_curve})
    return PathologicalResult(quantities, curves)


def cosine_target(x: np.ndarray) -> np.ndarray:
    return 3.0 * np.cos(2.0 * np.pi * x)


def sample_outer_points(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform draws from [-1, -0.5] U [0.5, 1]."""
    return rng.choice([-1.0, 1.0], size=n) * rng.uniform(0.5, 1.0, size=n)


def run_pathological2(rng: np.random.Generator, n_train: int = 100, noise: float = 0.3,
                      lengthscale: float = 0.1, meea_reg: float = 1e-6, meva_reg: float = 1e-3,
                      meva_iters: int = 50, n_grid: int = CURVE_POINTS) -> PathologicalResult:
    """
    Softmax MEEA against MEVA with no data in the middle of the domain.

    Y = 3 cos(2 pi x), M_G = Y + N(0, noise^2), M_B = 3 and M_N = -3; training
    points avoid [-0.5, 0.5]. The convex MEEA interpolates the data by mixing
    M_B and M_N and reverts to the uniform average in the gap. MEVA is fitted
    with the covariance loss by Gauss-Newton, started from the sharp-loss fit.

    Args:
        rng: Source of the inputs and of the good model's noise
        n_train: Training points
        noise: Standard deviation of the good model's error
        lengthscale: RBF lengthscale of both aggregators
        meea_reg: Ridge strength on the MEEA logits
        meva_reg: Ridge strength of the MEVA log-variance regressors
        meva_iters: Gauss-Newton iterations of the covariance-loss fit
        n_grid: Points of the dense evaluation grid on [-1, 1]

    Returns:
        PathologicalResult
    """
    def models(points):
        target = cosine_target(points)
        return np.column_stack([target + noise * rng.normal(size=len(points)),
                                np.full(len(points), 3.0), np.full(len(points), -3.0)])

    x = sample_outer_points(rng, n_train)
    y = cosine_target(x)
    samples = ErrorSamples(x, models(x), y)
    kernel = KernelSpec('rbf', lengthscale)
    meea = fit_meea_softmax(samples, kernel, meea_reg)
    meva = fit_meva_gn(samples, kernel, meva_reg, iters=meva_iters)

    grid = np.linspace(-1.0, 1.0, n_grid)
    truth = cosine_target(grid)
    grid_values = models(grid)
    meea_curve = meea.predict(grid, grid_values)
    meva_curve = meva.predict(grid, grid_values)
    gap = np.abs(grid) <= 0.5

    def gap_mse(curve):
        return float(np.mean((curve[gap] - truth[gap]) ** 2))

    quantities = {
        'meea_train_mse': float(np.mean((meea.predict(x, samples.model_values) - y) ** 2)),
        'meva_train_mse': float(np.mean((meva.predict(x, samples.model_values) - y) ** 2)),
        'meea_gap_mse': gap_mse(meea_curve),
        'meva_gap_mse': gap_mse(meva_curve),
        'good_model_gap_mse': gap_mse(grid_values[:, 0]),
        'meea_gap_mean_weight_good': float(np.mean(meea.weights(grid[gap])[:, 0])),
        'meva_gap_mean_weight_good': float(np.mean(meva.weights(grid[gap])[:, 0])),
        'meva_sharp_objective': float(meva.history[0]),
        'meva_objective': float(meva.history[-1]),
    }
    logger.info("pathological2: gap MSE MEEA %.4f, MEVA %.4f, good model %.4f",
                quantities['meea_gap_mse'], quantities['meva_gap_mse'], quantities['good_model_gap_mse'])
    curves = pd.DataFrame({'x': grid, 'target': truth, 'good_model': grid_values[:, 0],
                           'meea': meea_curve, 'meva': meva_curve})
    return PathologicalResult(quantities, curves)
