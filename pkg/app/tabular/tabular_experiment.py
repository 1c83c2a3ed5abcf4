"""
Tabular aggregation benchmark.

For every seeded split the base learners are fitted on the training part, the
aggregators on the validation part (with the model outputs M(x) as their
inputs) and everything is scored on the test part. The base learners are also
refitted on train + validation, which is the fair baseline for an aggregate
that saw the validation data.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.aggregation.model_bank import ModelBank
from app.kernels.kernels import KernelSpec, median_lengthscale
from app.tabular.dataset import DEFAULT_RATIOS, TabularDataset, split
from app.tabular.learners import BaseLearner, make_learner
from app.training.direct_loss import fit_direct_mva
from app.training.meea_trainer import fit_meea
from app.training.meva_trainer import fit_meva_gn, fit_meva_sharp
from app.training.samples import ErrorSamples
from app.utils.exceptions import InvalidInput, MevaError

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ['split_seed', 'method', 'scope', 'test_mse']
SUMMARY_COLUMNS = ['method', 'scope', 'mean_mse', 'std_mse', 'r_train', 'r_all']
SCOPES = ('train', 'train+val', 'aggregate')
AGGREGATORS = ('meva', 'meea', 'direct_mva', 'uniform')

LearnerFactory = Callable[[], BaseLearner]


@dataclass(frozen=True)
class TabularSettings:
    """
    Attributes:
        learners: Base learner kinds (or keys of ``factories``), at least two
        n_splits: Number of seeded splits
        ratios: (train, val, test) fractions
        seed: Master seed; split seeds are derived from it
        meva_loss: 'sharp' or 'covariance'
        meva_reg: Ridge strength of the log-variance regressors
        meea_reg: Ridge strength of kernel MEEA
        direct_reg: Coefficient penalty of the direct variance loss
        learner_params: Per-kind overrides of the learner defaults
    """

    learners: Tuple[str, ...] = ('ridge', 'knn', 'gbt', 'krr')
    n_splits: int = 20
    ratios: Tuple[float, float, float] = DEFAULT_RATIOS
    seed: int = 0
    meva_loss: str = 'sharp'
    meva_reg: float = 1e-3
    meea_reg: float = 1e-3
    direct_reg: float = 1e-3
    learner_params: Dict[str, Dict] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.learners) < 2:
            raise InvalidInput(f"need at least two base learners, got {list(self.learners)}")
        if len(set(self.learners)) != len(self.learners):
            raise InvalidInput("learner names must be unique")
        if self.n_splits < 1:
            raise InvalidInput(f"n_splits must be positive, got {self.n_splits}")
        if self.meva_loss not in ('sharp', 'covariance'):
            raise InvalidInput(f"unknown MEVA loss '{self.meva_loss}'")


@dataclass(frozen=True)
class TabularReport:
    """Per-split test errors (REPORT_COLUMNS) and their summary (SUMMARY_COLUMNS)."""

    records: pd.DataFrame
    summary: pd.DataFrame

    def mean_mse(self, method: str, scope: str = 'aggregate') -> float:
        row = self.summary[(self.summary['method'] == method) & (self.summary['scope'] == scope)]
        if row.empty:
            raise InvalidInput(f"no summary row for {method} ({scope})")
        return float(row['mean_mse'].iloc[0])


def _mse(prediction: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean((prediction - targets) ** 2))


def _fit_bank(names: Sequence[str], data: TabularDataset, build: Callable[[str], BaseLearner]) -> ModelBank:
    return ModelBank(list(names), [build(name).fit(data.features, data.targets) for name in names])


def run_split(ds: TabularDataset, settings: TabularSettings, split_seed: int,
              build: Callable[[str], BaseLearner]) -> List[list]:
    """
    Score every base learner and aggregator on one split.

    Returns:
        Rows of REPORT_COLUMNS
    """
    train, val, test = split(ds, settings.ratios, np.random.default_rng(split_seed))
    if len(val) == 0 or len(test) == 0:
        raise InvalidInput(f"split ratios {settings.ratios} leave an empty validation or test part")
    rows = []

    bank = _fit_bank(settings.learners, train, build)
    val_outputs = bank(val.features)
    test_outputs = bank(test.features)
    for k, name in enumerate(bank.names):
        rows.append([split_seed, name, 'train', _mse(test_outputs[:, k], test.targets)])

    samples = ErrorSamples(val_outputs, val_outputs, val.targets)
    kernel = KernelSpec('matern32', median_lengthscale(val_outputs))
    if settings.meva_loss == 'sharp':
        meva = fit_meva_sharp(samples, kernel, settings.meva_reg)
    else:
        meva = fit_meva_gn(samples, kernel, settings.meva_reg)
    meea = fit_meea(samples, kernel, settings.meea_reg)
    direct = fit_direct_mva(samples, kernel, settings.direct_reg)
    predictions = {
        'meva': meva.predict(test_outputs, test_outputs),
        'meea': meea.predict(test_outputs, test_outputs),
        'direct_mva': direct.predict(test_outputs, test_outputs),
        'uniform': test_outputs.mean(axis=1),
    }
    for method in AGGREGATORS:
        rows.append([split_seed, method, 'aggregate', _mse(predictions[method], test.targets)])

    refit = _fit_bank(settings.learners, train.concat(val), build)
    refit_outputs = refit(test.features)
    for k, name in enumerate(refit.names):
        rows.append([split_seed, name, 'train+val', _mse(refit_outputs[:, k], test.targets)])
    return rows


def summarize(records: pd.DataFrame) -> pd.DataFrame:
    """
    Mean and standard deviation of the test MSE per (method, scope).

    Aggregate rows also carry r = 1 - MSE(aggregate) / MSE(best base learner),
    against the train-only learners (r_train) and against all of them (r_all).
    """
    grouped = records.groupby(['method', 'scope'], sort=False)['test_mse']
    summary = grouped.agg(mean_mse='mean', std_mse=lambda values: values.std(ddof=0)).reset_index()
    base = summary[summary['scope'] != 'aggregate']
    best_train = base.loc[base['scope'] == 'train', 'mean_mse'].min()
    best_all = base['mean_mse'].min()
    is_aggregate = summary['scope'] == 'aggregate'
    summary['r_train'] = np.where(is_aggregate, 1.0 - summary['mean_mse'] / best_train, np.nan)
    summary['r_all'] = np.where(is_aggregate, 1.0 - summary['mean_mse'] / best_all, np.nan)
    return summary[SUMMARY_COLUMNS]


def run_tabular_experiment(ds: TabularDataset, settings: TabularSettings,
                           factories: Optional[Dict[str, LearnerFactory]] = None) -> TabularReport:
    """
    Run the benchmark over ``settings.n_splits`` seeded splits.

    Args:
        ds: Regression dataset
        settings: Benchmark settings
        factories: Constructors for learner names that are not built-in kinds

    Returns:
        TabularReport
    """
    factories = factories or {}

    def build(name: str) -> BaseLearner:
        if name in factories:
            return factories[name]()
        return make_learner(name, settings.learner_params.get(name))

    split_seeds = np.random.SeedSequence(settings.seed).generate_state(settings.n_splits)
    rows = []
    for index, split_seed in enumerate(split_seeds):
        try:
            rows.extend(run_split(ds, settings, int(split_seed), build))
        except MevaError as e:
            raise e.__class__(f"split {index} (seed {split_seed}) failed: {e}") from e
        logger.debug("split %d of %d done", index + 1, settings.n_splits)

    records = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    summary = summarize(records)
    meva = summary[(summary['method'] == 'meva')].iloc[0]
    logger.info("tabular: MEVA mean MSE %.4g, r_train %.3f, r_all %.3f",
                meva['mean_mse'], meva['r_train'], meva['r_all'])
    return TabularReport(records, summary)
