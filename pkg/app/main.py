"""
Experiment orchestration: every experiment writes its CSV tables, optional
plots and a manifest into the configured output directory.
"""

import logging
import time
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np
import pandas as pd

from app.config.config import RunConfig, save_manifest
from app.experiments.pathological import QUANTITY_COLUMNS, run_pathological1, run_pathological2
from app.experiments.pde_experiments import AGGREGATE_ID, BASELINE_ID, PdeSettings, run_pde_experiment
from app.pde.grid import GridFunction
from app.plots.plotter import emit_plots
from app.tabular.dataset import load_csv, synthetic_regression
from app.tabular.tabular_experiment import TabularSettings, run_tabular_experiment
from app.theory.closed_forms import closed_forms, draw_case
from app.theory.nested_kriging import DOMAIN, nested_kriging_mea, random_collocation_sets
from app.theory.rate_experiment import MIN_TRIALS, rate_experiment
from app.utils.cli import CLI
from app.utils.exceptions import MevaError
from app.utils.tables import write_table

logger = logging.getLogger(__name__)


def _quantities_table(quantities: Dict[str, float]) -> pd.DataFrame:
    return pd.DataFrame(list(quantities.items()), columns=QUANTITY_COLUMNS)


def _plot(config: RunConfig, path: Path, kind: str, cli: CLI) -> List[Path]:
    if not config.plots:
        return []
    written = emit_plots(path, kind)
    for svg in written:
        cli.print_info(f"Plot written to {svg}")
    return written


def run_pathological(config: RunConfig, cli: CLI) -> List[Path]:
    runner = run_pathological1 if config.experiment == 'pathological1' else run_pathological2
    result = runner(np.random.default_rng(config.seed))
    cli.print_quantities(result.quantities, config.experiment)
    out = config.out_path
    written = [write_table(result.table(), out / f'{config.experiment}.csv')]
    curves = write_table(result.curves, out / f'{config.experiment}_curves.csv')
    written.append(curves)
    return written + _plot(config, curves, 'curves', cli)


def run_tabular(config: RunConfig, cli: CLI) -> List[Path]:
    if config.data is not None:
        ds = load_csv(config.data, config.target)
        if ds.dropped_rows:
            cli.print_warning(f"Dropped {ds.dropped_rows} rows with missing values")
    else:
        cli.print_info("No --data given, using a synthetic regression problem")
        ds = synthetic_regression(np.random.default_rng(config.seed))
    settings = TabularSettings(learners=tuple(config.learners), n_splits=config.n_splits,
                               ratios=tuple(config.ratios), seed=config.seed)
    report = run_tabular_experiment(ds, settings)
    cli.print_table(report.summary, f"Tabular benchmark ({len(ds)} rows, {config.n_splits} splits)")
    out = config.out_path
    records = write_table(report.records, out / 'tabular.csv')
    summary = write_table(report.summary, out / 'tabular_summary.csv')
    return [records, summary] + _plot(config, records, 'tabular', cli)


def run_pde(config: RunConfig, cli: CLI) -> List[Path]:
    settings = PdeSettings(n_train=config.n_train, n_test=config.n_test, grid=config.grid, nt=config.nt,
                           subsample=config.subsample, reg=config.reg, anchor_budget=config.anchor_budget,
                           n_colloc=config.n_colloc, seed=config.seed)
    dump_dir = config.out_path / f'{config.experiment}_fields' if config.dump_fields else None
    report = run_pde_experiment(config.experiment, settings, dump_dir)
    cli.print_table(report.summary, f"{config.experiment}: geometric-mean log10 MSE")
    best_name, best_score = report.best_solver()
    gap = best_score - report.score(AGGREGATE_ID)
    cli.print_info(f"Aggregate is {gap:.3f} below the best solver ({best_name}) "
                   f"and {report.score(BASELINE_ID) - report.score(AGGREGATE_ID):.3f} below the uniform mean")
    out = config.out_path
    results = write_table(report.results, out / f'{config.experiment}.csv')
    summary = write_table(report.summary, out / f'{config.experiment}_summary.csv')
    return [results, summary] + _plot(config, results, 'pde', cli)


def run_theorem(config: RunConfig, cli: CLI) -> List[Path]:
    case_seed, rate_seed = np.random.SeedSequence(config.seed).spawn(2)
    case = draw_case(np.random.default_rng(case_seed), n=config.n_models, eps=config.eps,
                     rho=config.rho, kappa=config.kappa)
    if config.trials < MIN_TRIALS:
        cli.print_warning(f"Only {config.trials} trials per N; fitted slopes are unreliable below {MIN_TRIALS}")
    result = rate_experiment(case, config.Ns, config.trials, rate_seed, min_trials=1)
    if result.too_many_drops:
        cli.print_warning("More than 10% of the trials were dropped for some N")
    forms = closed_forms(case)
    quantities = {'slope_v': result.slope_v, 'slope_e': result.slope_e, 'mix_lambda': forms.mix_lambda,
                  'loss_star': forms.loss_star, 'loss_v': forms.loss_v, 's': forms.s, 't': forms.t,
                  'u': forms.u, 'too_many_drops': float(result.too_many_drops)}
    cli.print_table(result.table, "Excess losses")
    cli.print_quantities(quantities, "Closed forms and fitted slopes")
    out = config.out_path
    table = write_table(result.table, out / 'theorem.csv')
    summary = write_table(_quantities_table(quantities), out / 'theorem_summary.csv')
    return [table, summary] + _plot(config, table, 'theorem', cli)


def manufactured_solution(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def manufactured_source(x, y):
    return 2.0 * np.pi ** 2 * manufactured_solution(x, y)


def run_nested_kriging(config: RunConfig, cli: CLI) -> List[Path]:
    colloc_sets = random_collocation_sets(np.random.default_rng(config.seed), config.nk_models,
                                          config.nk_interior, config.nk_boundary)
    grid = GridFunction(np.zeros((config.nk_grid, config.nk_grid)), DOMAIN)
    result = nested_kriging_mea(colloc_sets, config.nk_lengthscale, manufactured_source, grid)
    X, Y = grid.mesh()
    truth = manufactured_solution(X, Y)
    fields = {f'model_{k}': field.values for k, field in enumerate(result.model_fields)}
    fields['uniform'] = np.mean([field.values for field in result.model_fields], axis=0)
    fields[AGGREGATE_ID] = result.aggregate.values
    rows = []
    for model_id, values in fields.items():
        mse = float(np.mean((values - truth) ** 2))
        rows.append([model_id, mse, float(np.log10(max(mse, 1e-300)))])
    table = pd.DataFrame(rows, columns=['model_id', 'mse', 'log10_mse'])
    cli.print_table(table, "Nested kriging")
    if result.fallback_points:
        cli.print_warning(f"{result.fallback_points} grid points fell back to the uniform average")
    return [write_table(table, config.out_path / 'nested_kriging.csv')]


RUNNERS: Dict[str, Callable[[RunConfig, CLI], List[Path]]] = {
    'pathological1': run_pathological,
    'pathological2': run_pathological,
    'tabular': run_tabular,
    'laplace': run_pde,
    'burgers': run_pde,
    'theorem': run_theorem,
    'nested-kriging': run_nested_kriging,
}


def run(config: RunConfig, cli: CLI = None) -> int:
    """
    Run one experiment and write its artifacts.

    Args:
        config: Validated run configuration
        cli: Console helper, created when omitted

    Returns:
        Process exit status: 0 on success, 1 on any failure
    """
    cli = cli or CLI()
    cli.print_header(f"Experiment: {config.experiment} (seed {config.seed})")
    start = time.perf_counter()
    try:
        config.out_path.mkdir(parents=True, exist_ok=True)
        written = RUNNERS[config.experiment](config, cli)
        wall_time = time.perf_counter() - start
        written.append(save_manifest(config, config.out_path, wall_time))
    except (MevaError, OSError) as e:
        logger.debug("experiment failed", exc_info=True)
        cli.print_error(f"{config.experiment} failed: {e}")
        return 1
    for path in written:
        cli.print_info(f"Wrote {path}")
    cli.print_success(f"{config.experiment} finished in {wall_time:.1f} s")
    return 0


def plot(csv_path, kind: str, cli: CLI = None) -> int:
    """Render an existing results CSV; returns the exit status."""
    cli = cli or CLI()
    try:
        written = emit_plots(csv_path, kind)
    except (MevaError, OSError) as e:
        cli.print_error(f"Plotting {csv_path} failed: {e}")
        return 1
    for path in written:
        cli.print_success(f"Plot written to {path}")
    return 0
