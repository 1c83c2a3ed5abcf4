"""
Monte-Carlo comparison of how fast the plug-in MEVA and MEA weights approach
their population losses as the number of observations grows.
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import pandas as pd

from app.theory.closed_forms import TheoremCase, closed_forms, empirical_estimators, sample_case, true_loss
from app.utils.exceptions import InvalidInput, SingularCovariance

logger = logging.getLogger(__name__)

RATE_COLUMNS = ['N', 'excess_v_mean', 'excess_v_se', 'excess_e_mean', 'excess_e_se', 'drops']
MIN_TRIALS = 100
DROP_WARNING_FRACTION = 0.1


@dataclass(frozen=True)
class RateResult:
    """
    Attributes:
        table: One row per N with the columns of RATE_COLUMNS
        slope_v: Least-squares log-log slope of the MEVA excess loss
        slope_e: Same for the MEA excess loss
        too_many_drops: Some N lost more than 10% of its trials
    """

    table: pd.DataFrame
    slope_v: float
    slope_e: float
    too_many_drops: bool


def loglog_slope(Ns: Sequence[float], values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    mask = values > 0
    if mask.sum() < 2:
        return float('nan')
    return float(np.polyfit(np.log(np.asarray(Ns, dtype=float)[mask]), np.log(values[mask]), 1)[0])


def rate_experiment(case: TheoremCase, Ns: Sequence[int], trials: int,
                    seed: Union[int, np.random.SeedSequence] = 0, min_trials: int = MIN_TRIALS) -> RateResult:
    """
    Excess losses of the plug-in weights over independent trials.

    excess_V = L(alpha_v_hat) - L(alpha*) / mix and excess_E = L(alpha_e_hat) - L(alpha*).
    Every trial draws from its own stream spawned from ``seed``, so results do not
    depend on evaluation order. Trials whose estimates are singular are dropped.

    Args:
        case: Generating law
        Ns: Sample sizes, each larger than the number of models
        trials: Trials per sample size
        seed: Master seed
        min_trials: Smallest accepted ``trials``; lowering it is only meant for smoke runs

    Returns:
        RateResult
    """
    if trials < max(min_trials, 1):
        raise InvalidInput(f"need at least {max(min_trials, 1)} trials, got {trials}")
    if any(N <= case.n for N in Ns):
        raise InvalidInput(f"every N must exceed the number of models ({case.n})")
    forms = closed_forms(case)
    loss_v = forms.loss_star / forms.mix_lambda if forms.mix_lambda > 0 else forms.loss_v
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)

    rows = []
    too_many_drops = False
    for N, size_seed in zip(Ns, root.spawn(len(Ns))):
        excess_v, excess_e = [], []
        for trial_seed in size_seed.spawn(trials):
            M, Y = sample_case(case, N, np.random.default_rng(trial_seed))
            try:
                estimates = empirical_estimators(M, Y, case.eps)
            except SingularCovariance:
                continue
            excess_v.append(true_loss(estimates.alpha_v_hat, case) - loss_v)
            excess_e.append(true_loss(estimates.alpha_e_hat, case) - forms.loss_star)
        drops = trials - len(excess_v)
        if drops > DROP_WARNING_FRACTION * trials:
            too_many_drops = True
            logger.warning("N=%d: dropped %d of %d trials", N, drops, trials)
        if not excess_v:
            rows.append([N, np.nan, np.nan, np.nan, np.nan, drops])
            continue
        kept = len(excess_v)
        rows.append([N, np.mean(excess_v), np.std(excess_v, ddof=1) / np.sqrt(kept) if kept > 1 else np.nan,
                     np.mean(excess_e), np.std(excess_e, ddof=1) / np.sqrt(kept) if kept > 1 else np.nan, drops])
        logger.debug("N=%d: excess_v %.3e, excess_e %.3e", N, rows[-1][1], rows[-1][3])

    table = pd.DataFrame(rows, columns=RATE_COLUMNS)
    table['N'] = table['N'].astype(int)
    table['drops'] = table['drops'].astype(int)
    return RateResult(table, loglog_slope(table['N'], table['excess_v_mean']),
                      loglog_slope(table['N'], table['excess_e_mean']), too_many_drops)
