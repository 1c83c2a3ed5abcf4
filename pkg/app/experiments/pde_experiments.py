"""
End-to-end operator aggregation on the Laplace and Burgers solver banks.

Training functions feed the pointwise dataset of the aggregator; test functions
are scored per solver, for the aggregate and for the uniform average of all
solvers.
"""

import logging
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from app.aggregation.model_bank import ModelBank
from app.operator.operator_aggregation import (
    FieldPair,
    aggregate_outputs,
    build_dataset,
    fit_operator_meva,
    geometric_mean_log10_mse,
    run_solvers,
)
from app.pde.burgers import (
    DEFAULT_VISCOSITY,
    REFERENCE_REFINEMENT,
    SCHEMES,
    burgers_reference,
    burgers_solve,
    sample_burgers_ic,
)
from app.pde.gp_solver import DEFAULT_LENGTHSCALE, GpLaplaceSolver
from app.pde.grid import write_grid
from app.pde.laplace import GRADINGS, laplace_fdm, laplace_spectral, sample_laplace_pair
from app.utils.exceptions import InvalidInput, OutputError

logger = logging.getLogger(__name__)

PROBLEMS = ('laplace', 'burgers')
RESULT_COLUMNS = ['sample_id', 'solver_id', 'mse', 'log10_mse']
SUMMARY_COLUMNS = ['solver_id', 'geo_mean_log10_mse']
AGGREGATE_ID = 'aggregate'
BASELINE_ID = 'mean_baseline'


@dataclass(frozen=True)
class PdeSettings:
    """
    Attributes:
        n_train: Training functions
        n_test: Test functions
        grid: Nodes per side (Laplace) or spatial nodes (Burgers)
        nt: Output times for Burgers, including t = 0
        subsample: Grid points per training function in the dataset; None keeps all
        reg: Ridge strength of the log-error regressors
        anchor_budget: Maximum KRR anchors
        n_colloc: Interior collocation points of the GP Laplace solver
        gp_lengthscale: RBF lengthscale of the GP Laplace solver
        viscosity: Burgers viscosity
        reference_refinement: Spatial refinement of the Burgers ground truth
        seed: Master seed
    """

    n_train: int = 60
    n_test: int = 20
    grid: int = 64
    nt: int = 128
    subsample: Optional[int] = 100
    reg: float = 1e-3
    anchor_budget: int = 2000
    n_colloc: int = 400
    gp_lengthscale: float = DEFAULT_LENGTHSCALE
    viscosity: float = DEFAULT_VISCOSITY
    reference_refinement: int = REFERENCE_REFINEMENT
    seed: int = 0

    def __post_init__(self):
        sizes = {'n_train': self.n_train, 'n_test': self.n_test, 'grid': self.grid, 'nt': self.nt,
                 'anchor_budget': self.anchor_budget, 'n_colloc': self.n_colloc,
                 'reference_refinement': self.reference_refinement}
        bad = [name for name, value in sizes.items() if value < 1]
        if self.subsample is not None and self.subsample < 1:
            bad.append('subsample')
        if bad:
            raise InvalidInput(f"sizes must be positive: {bad}")


@dataclass(frozen=True)
class PdeReport:
    """Per-sample errors (RESULT_COLUMNS) and geometric-mean summary (SUMMARY_COLUMNS)."""

    results: pd.DataFrame
    summary: pd.DataFrame

    def score(self, solver_id: str) -> float:
        row = self.summary[self.summary['solver_id'] == solver_id]
        if row.empty:
            raise InvalidInput(f"no summary row for '{solver_id}'")
        return float(row['geo_mean_log10_mse'].iloc[0])

    def best_solver(self) -> Tuple[str, float]:
        solvers = self.summary[~self.summary['solver_id'].isin([AGGREGATE_ID, BASELINE_ID])]
        best = solvers.loc[solvers['geo_mean_log10_mse'].idxmin()]
        return str(best['solver_id']), float(best['geo_mean_log10_mse'])


def laplace_bank(settings: PdeSettings, rng: np.random.Generator) -> ModelBank:
    """Three finite-difference gradings, the sine-transform solver and GP collocation."""
    bank = ModelBank()
    for grading in GRADINGS:
        bank.add('fdm' if grading == 'uniform' else f'fdm_{grading}', partial(laplace_fdm, grading=grading))
    bank.add('spectral', laplace_spectral)
    bank.add('gp', GpLaplaceSolver(settings.grid, settings.grid, settings.n_colloc, settings.gp_lengthscale, rng))
    return bank


def burgers_bank(settings: PdeSettings) -> ModelBank:
    """One solver per scheme, all on the shared (nt, nx) output grid."""
    return ModelBank(list(SCHEMES), [partial(burgers_solve, scheme=scheme, nu=settings.viscosity, nt=settings.nt)
                                     for scheme in SCHEMES])


def laplace_pairs(settings: PdeSettings, n: int, rng: np.random.Generator) -> List[FieldPair]:
    pairs = []
    for _ in range(n):
        sample = sample_laplace_pair(rng, settings.grid, settings.grid)
        pairs.append((sample.f, sample.u))
    return pairs


def burgers_pairs(settings: PdeSettings, n: int, rng: np.random.Generator) -> List[FieldPair]:
    pairs = []
    for j in range(n):
        u0 = sample_burgers_ic(rng, settings.grid)
        truth = burgers_reference(u0, settings.viscosity, settings.nt, settings.reference_refinement)
        pairs.append((u0, truth))
        logger.debug("Burgers reference %d of %d done", j + 1, n)
    return pairs


def _dump_fields(dump_dir: Path, sample_id: int, names: List[str], aggregate, weight_fields):
    try:
        dump_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputError(f"could not create {dump_dir}: {e}") from e
    write_grid(dump_dir / f'sample{sample_id:03d}_aggregate.grid', aggregate)
    for name, field in zip(names, weight_fields):
        write_grid(dump_dir / f'sample{sample_id:03d}_weight_{name}.grid', field)


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """Geometric-mean log10 MSE per solver, in first-appearance order."""
    rows = [[solver_id, geometric_mean_log10_mse(group['mse'])]
            for solver_id, group in results.groupby('solver_id', sort=False)]
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def run_pde_experiment(problem: str, settings: PdeSettings,
                       dump_dir: Optional[Union[str, Path]] = None) -> PdeReport:
    """
    Fit the operator aggregate on training functions and score it on test functions.

    Args:
        problem: 'laplace' or 'burgers'
        settings: Experiment sizes and hyperparameters
        dump_dir: If given, the aggregate and weight fields of every test function
            are written there in MEVA-GRID format

    Returns:
        PdeReport
    """
    if problem not in PROBLEMS:
        raise InvalidInput(f"unknown PDE problem '{problem}', expected one of {PROBLEMS}")
    train_seed, test_seed, solver_seed, fit_seed = np.random.SeedSequence(settings.seed).spawn(4)
    if problem == 'laplace':
        bank = laplace_bank(settings, np.random.default_rng(solver_seed))
        make_pairs = laplace_pairs
    else:
        bank = burgers_bank(settings)
        make_pairs = burgers_pairs

    train = make_pairs(settings, settings.n_train, np.random.default_rng(train_seed))
    test = make_pairs(settings, settings.n_test, np.random.default_rng(test_seed))
    fit_rng = np.random.default_rng(fit_seed)
    dataset = build_dataset(bank, train, settings.subsample, fit_rng)
    aggregate = fit_operator_meva(dataset, bank, reg=settings.reg, rng=fit_rng,
                                  anchor_budget=settings.anchor_budget)

    rows = []
    for j, (f, truth) in enumerate(test):
        outputs, diverged, grid = run_solvers(bank, f)
        combined, weight_fields = aggregate_outputs(aggregate, f, outputs, grid)
        errors = {name: np.mean((outputs[k] - truth.values) ** 2) for k, name in enumerate(bank.names)}
        errors[AGGREGATE_ID] = np.mean((combined.values - truth.values) ** 2)
        errors[BASELINE_ID] = np.mean((outputs.mean(axis=0) - truth.values) ** 2)
        for name, mse in errors.items():
            rows.append([j, name, float(mse), float(np.log10(max(mse, 1e-300)))])
        if any(diverged):
            logger.info("test function %d: diverged solvers %s", j,
                        [name for name, flag in zip(bank.names, diverged) if flag])
        if dump_dir is not None:
            _dump_fields(Path(dump_dir), j, bank.names, combined, weight_fields)

    results = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    report = PdeReport(results, summarize(results))
    best_name, best_score = report.best_solver()
    logger.info("%s: aggregate %.3f vs best solver %s %.3f (geometric-mean log10 MSE)",
                problem, report.score(AGGREGATE_ID), best_name, best_score)
    return report
