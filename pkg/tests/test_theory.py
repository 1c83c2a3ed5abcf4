"""Tests for the closed-form theorem cases, the rate experiment and nested kriging."""

import numpy as np
import pytest

from app.pde.gp_solver import GpCollocation
from app.pde.grid import GridFunction
from app.theory.closed_forms import (
    TheoremCase,
    closed_forms,
    empirical_estimators,
    random_case,
    sample_case,
    true_loss,
)
from app.theory.nested_kriging import model_correlations, nested_kriging_mea, random_collocation_sets
from app.theory.rate_experiment import RATE_COLUMNS, rate_experiment
from app.utils.exceptions import DegenerateCase, InvalidInput, SingularCovariance

RATE_NS = [50, 100, 200, 400, 800, 1600, 3200]


def case_with_shift(kappa, n=3, eps=0.1):
    for seed in range(50):
        try:
            return random_case(np.random.default_rng(seed), n=n, eps=eps, rho=0.5, kappa=kappa)
        except DegenerateCase:
            continue
    raise AssertionError("no valid case found")


class TestClosedForms:

    def test_zero_correlation_collapse(self):
        case = random_case(np.random.default_rng(0), n=3, eps=0.1, rho=0.0)
        forms = closed_forms(case)
        assert forms.t == 0.0 and forms.u == 0.0
        np.testing.assert_allclose(forms.alpha_r, 0.0)
        np.testing.assert_allclose(forms.mix_lambda, forms.s / (forms.s + 0.01))
        np.testing.assert_allclose(forms.alpha_star, forms.mix_lambda * forms.alpha_v)

    def test_hand_example(self):
        case = TheoremCase(np.eye(2) / np.sqrt(2.0), np.zeros(2), 1.0, 0.1)
        forms = closed_forms(case)
        np.testing.assert_allclose(forms.s, 2.0 * np.sqrt(2.0))
        np.testing.assert_allclose(forms.alpha_v, [0.5, 0.5])
        np.testing.assert_allclose(forms.mix_lambda, 2.0 * np.sqrt(2.0) / (2.0 * np.sqrt(2.0) + 0.01))

    def test_matches_dense_inversion(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            case = random_case(rng, n=4, eps=rng.uniform(0.05, 0.5), rho=rng.uniform(0.0, 0.9))
            C, gamma = case.second_moments()
            np.testing.assert_allclose(closed_forms(case).alpha_star, np.linalg.solve(C, gamma), atol=1e-8)

    def test_losses(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            case = random_case(rng, n=3, eps=0.2, rho=rng.uniform(0.0, 0.9))
            forms = closed_forms(case)
            assert 0.0 <= forms.mix_lambda <= 1.0
            np.testing.assert_allclose(forms.loss_star, forms.mix_lambda * forms.loss_v, rtol=1e-10)
            np.testing.assert_allclose(true_loss(forms.alpha_star, case), forms.loss_star, rtol=1e-7, atol=1e-12)
            np.testing.assert_allclose(true_loss(forms.alpha_v, case), forms.loss_v, rtol=1e-7, atol=1e-12)
            np.testing.assert_allclose(true_loss(np.zeros(3), case), case.var_y)

    def test_global_and_constrained_optimality(self):
        rng = np.random.default_rng(3)
        case = random_case(rng, n=3, eps=0.1, rho=0.6)
        forms = closed_forms(case)
        C, gamma = case.second_moments()
        alphas = forms.alpha_star + rng.normal(scale=0.3, size=(10000, 3))
        losses = case.var_y - 2.0 * alphas @ gamma + np.einsum('ij,jk,ik->i', alphas, C, alphas)
        assert np.all(losses >= forms.loss_star - 1e-12)
        constrained = alphas - (alphas.sum(axis=1, keepdims=True) - 1.0) / 3.0
        unbiased_losses = case.eps ** 2 * np.einsum('ij,jk,ik->i', constrained, case.A, constrained)
        assert np.all(unbiased_losses >= forms.loss_v - 1e-12)

    def test_degenerate_shift(self):
        A = np.eye(2) / np.sqrt(2.0)
        b = np.full(2, -0.1 / (2.0 * np.sqrt(2.0)))
        with pytest.raises(DegenerateCase):
            closed_forms(TheoremCase(A, b, 1.0, 0.1))

    def test_kappa_sets_t(self):
        case = case_with_shift(2.0)
        np.testing.assert_allclose(closed_forms(case).t, 0.2)

    def test_invalid_cases(self):
        with pytest.raises(InvalidInput):
            TheoremCase(np.eye(2), np.zeros(2), 1.0, 0.1)
        with pytest.raises(InvalidInput):
            TheoremCase(np.eye(2) / np.sqrt(2.0), np.array([1.0, 0.0]), 1.0, 0.1)


class TestSampling:

    def test_moments(self):
        case = random_case(np.random.default_rng(5), n=3, eps=0.1, rho=0.5)
        M, Y = sample_case(case, 100000, np.random.default_rng(6))
        np.testing.assert_allclose(np.mean(Y ** 2), case.var_y, atol=5 * np.sqrt(2.0 / 100000))
        estimates = empirical_estimators(M, Y, case.eps)
        np.testing.assert_allclose(estimates.A_hat, case.A, atol=0.025)
        np.testing.assert_allclose(estimates.b_hat, case.b, atol=0.025)

    def test_seeded(self):
        case = random_case(np.random.default_rng(7), n=2)
        a = sample_case(case, 50, np.random.default_rng(8))
        b = sample_case(case, 50, np.random.default_rng(8))
        np.testing.assert_array_equal(a[0], b[0])

    def test_exact_models_are_singular(self):
        Y = np.random.default_rng(9).normal(size=40)
        with pytest.raises(SingularCovariance):
            empirical_estimators(np.column_stack([Y, Y, Y]), Y, 0.1)

    def test_needs_more_samples_than_models(self):
        with pytest.raises(InvalidInput):
            empirical_estimators(np.ones((3, 3)), np.ones(3), 0.1)

    def test_plugin_variance_weights_never_beat_population(self):
        rng = np.random.default_rng(10)
        case = random_case(rng, n=3, eps=0.1, rho=0.5)
        loss_v = closed_forms(case).loss_v
        for _ in range(200):
            M, Y = sample_case(case, 30, rng)
            estimates = empirical_estimators(M, Y, case.eps)
            assert true_loss(estimates.alpha_v_hat, case) - loss_v >= -1e-12


class TestRateExperiment:

    def test_variance_weights_converge_at_inverse_n(self):
        case = case_with_shift(1.0)
        result = rate_experiment(case, RATE_NS, 200, seed=12)
        assert list(result.table.columns) == RATE_COLUMNS
        assert -1.2 <= result.slope_v <= -0.8
        assert np.all(result.table['excess_v_mean'] >= 0.0)
        assert not result.too_many_drops

    def test_uncorrelated_case_rates_agree(self):
        case = random_case(np.random.default_rng(13), n=3, eps=0.1, rho=0.0)
        result = rate_experiment(case, RATE_NS, 200, seed=14)
        assert abs(result.slope_v - result.slope_e) < 0.3

    def test_seed_reproducible(self):
        case = random_case(np.random.default_rng(15), n=2)
        a = rate_experiment(case, [20, 40], 100, seed=3)
        b = rate_experiment(case, [20, 40], 100, seed=3)
        assert a.table.equals(b.table)

    def test_validation(self):
        case = random_case(np.random.default_rng(16), n=3)
        with pytest.raises(InvalidInput):
            rate_experiment(case, [50], 10)
        with pytest.raises(InvalidInput):
            rate_experiment(case, [3], 100)


def sine_source(x, y):
    return 2.0 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)


def sine_solution(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


class TestNestedKriging:

    def test_identical_models(self):
        sets = random_collocation_sets(np.random.default_rng(17), 1) * 3
        grid = GridFunction(np.zeros((9, 9)), (-1.0, 1.0, -1.0, 1.0))
        result = nested_kriging_mea(sets, 0.5, sine_source, grid)
        np.testing.assert_allclose(result.aggregate.values, result.model_fields[0].values, atol=1e-12)
        assert result.fallback_points == 81

    def test_diagonal_is_variance_reduction(self):
        sets = random_collocation_sets(np.random.default_rng(18), 2)
        collocations = [GpCollocation.build(interior, boundary, 0.5) for interior, boundary in sets]
        points = np.random.default_rng(19).uniform(-0.9, 0.9, size=(30, 2))
        C, gamma = model_correlations(collocations, points)
        np.testing.assert_allclose(C[:, 0, 0], gamma[:, 0], rtol=1e-3, atol=1e-6)
        np.testing.assert_allclose(C[:, 1, 1], gamma[:, 1], rtol=1e-3, atol=1e-6)
        assert np.all(gamma <= 1.0 + 1e-8)

    def test_aggregate_beats_models(self):
        sets = random_collocation_sets(np.random.default_rng(20), 10)
        grid = GridFunction(np.zeros((21, 21)), (-1.0, 1.0, -1.0, 1.0))
        result = nested_kriging_mea(sets, 0.5, sine_source, grid)
        X, Y = grid.mesh()
        truth = sine_solution(X, Y)
        model_mse = [np.mean((field.values - truth) ** 2) for field in result.model_fields]
        uniform = np.mean([field.values for field in result.model_fields], axis=0)
        aggregate_mse = np.mean((result.aggregate.values - truth) ** 2)
        assert aggregate_mse < min(model_mse)
        assert aggregate_mse < np.mean((uniform - truth) ** 2)

    def test_needs_two_models(self):
        grid = GridFunction(np.zeros((5, 5)), (-1.0, 1.0, -1.0, 1.0))
        with pytest.raises(InvalidInput):
            nested_kriging_mea(random_collocation_sets(np.random.default_rng(0), 1), 0.5, sine_source, grid)
