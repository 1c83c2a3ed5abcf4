"""
Static SVG figures for the experiment CSVs.
"""

import logging
from pathlib import Path
from typing import List, Optional, Union

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from app.experiments.pde_experiments import AGGREGATE_ID, RESULT_COLUMNS  # noqa: E402
from app.tabular.tabular_experiment import REPORT_COLUMNS  # noqa: E402
from app.theory.rate_experiment import RATE_COLUMNS  # noqa: E402
from app.utils.exceptions import OutputError, SchemaMismatch  # noqa: E402
from app.utils.tables import read_table  # noqa: E402

logger = logging.getLogger(__name__)

PLOT_KINDS = ('pde', 'tabular', 'theorem', 'curves')
CURVE_COLUMNS = ['x', 'target']
SCHEMAS = {
    'pde': RESULT_COLUMNS,
    'tabular': REPORT_COLUMNS,
    'theorem': RATE_COLUMNS,
    'curves': CURVE_COLUMNS,
}


def sorted_pde_curves(results: pd.DataFrame) -> pd.DataFrame:
    """
    log10 MSE per solver (columns) and test sample (rows), rows ordered by the
    aggregate's error.
    """
    if AGGREGATE_ID not in set(results['solver_id']):
        raise SchemaMismatch(f"PDE results have no '{AGGREGATE_ID}' rows")
    table = results.pivot(index='sample_id', columns='solver_id', values='log10_mse')
    ordered = list(dict.fromkeys(results['solver_id']))
    return table[ordered].sort_values(AGGREGATE_ID, kind='stable')


def _plot_pde(results: pd.DataFrame, ax):
    curves = sorted_pde_curves(results)
    rank = np.arange(len(curves))
    for solver_id in curves.columns:
        style = {'color': 'black', 'linewidth': 2.0} if solver_id == AGGREGATE_ID else {'linewidth': 1.0}
        ax.plot(rank, curves[solver_id].to_numpy(), label=solver_id, **style)
    ax.set_xlabel('test sample (sorted by aggregate error)')
    ax.set_ylabel('log10 MSE')
    ax.legend(fontsize='small')


def _plot_tabular(records: pd.DataFrame, ax):
    means = records.groupby(['method', 'scope'], sort=False)['test_mse'].mean()
    labels = [f'{method}\n({scope})' for method, scope in means.index]
    colors = ['tab:orange' if scope == 'aggregate' else 'tab:blue' for _, scope in means.index]
    ax.bar(np.arange(len(means)), means.to_numpy(), color=colors)
    ax.set_xticks(np.arange(len(means)))
    ax.set_xticklabels(labels, rotation=60, fontsize='x-small')
    ax.set_ylabel('mean test MSE')


def _plot_theorem(table: pd.DataFrame, ax):
    for column, label in (('excess_v_mean', 'MEVA'), ('excess_e_mean', 'MEA')):
        mask = table[column] > 0
        ax.loglog(table.loc[mask, 'N'], table.loc[mask, column], marker='o', label=label)
    ax.set_xlabel('N')
    ax.set_ylabel('excess loss')
    ax.legend()


def _plot_curves(curves: pd.DataFrame, ax):
    for column in curves.columns[1:]:
        style = {'color': 'black', 'linewidth': 2.0} if column == 'target' else {'linewidth': 1.0}
        ax.plot(curves['x'], curves[column], label=column, **style)
    ax.set_xlabel('x')
    ax.legend(fontsize='small')


PLOTTERS = {
    'pde': _plot_pde,
    'tabular': _plot_tabular,
    'theorem': _plot_theorem,
    'curves': _plot_curves,
}


def emit_plots(csv_path: Union[str, Path], kind: str, out_dir: Optional[Union[str, Path]] = None) -> List[Path]:
    """
    Render a results CSV as an SVG next to it (or in ``out_dir``).

    Args:
        csv_path: Output of one of the experiments
        kind: One of PLOT_KINDS
        out_dir: Target directory

    Returns:
        Paths of the written SVG files

    Raises:
        SchemaMismatch: Unknown ``kind``, or the CSV lacks its columns
    """
    if kind not in PLOT_KINDS:
        raise SchemaMismatch(f"unknown plot kind '{kind}', expected one of {PLOT_KINDS}")
    csv_path = Path(csv_path)
    table = read_table(csv_path, SCHEMAS[kind])
    if table.empty:
        raise SchemaMismatch(f"{csv_path} has no rows")

    out_dir = Path(out_dir) if out_dir is not None else csv_path.parent
    target = out_dir / f'{csv_path.stem}.svg'
    fig, ax = plt.subplots(figsize=(8, 5))
    try:
        PLOTTERS[kind](table, ax)
        ax.set_title(csv_path.stem)
        fig.tight_layout()
        out_dir.mkdir(parents=True, exist_ok=True)
        fig.savefig(target, format='svg')
    except OSError as e:
        raise OutputError(f"could not write {target}: {e}") from e
    finally:
        plt.close(fig)
    logger.debug("wrote %s", target)
    return [target]
