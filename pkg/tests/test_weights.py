"""Tests for pointwise aggregation weights and the model bank."""

import numpy as np
import pytest

from app.aggregation.model_bank import ModelBank
from app.aggregation.weights import (
    CovarianceModel,
    SecondMoments,
    WeightVector,
    aggregate_pointwise,
    cholesky_solve,
    empirical_error_basis,
    mea_weights,
    mva_weights,
    rotated_weights,
    softmax_weights,
    with_constant_model,
)
from app.utils.exceptions import (
    DegenerateRotation,
    EmptyBank,
    InvalidInput,
    SingularCovariance,
)


def random_spd(rng, n, max_log_cond=6.0):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    eigenvalues = 10.0 ** rng.uniform(0.0, max_log_cond, size=n)
    A = Q @ np.diag(eigenvalues) @ Q.T
    return 0.5 * (A + A.T)


def rotation(theta):
    return np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])


class TestMvaWeights:

    def test_identity(self):
        np.testing.assert_allclose(mva_weights(np.eye(2)).weights, [0.5, 0.5], atol=1e-15)

    def test_diagonal(self):
        np.testing.assert_allclose(mva_weights(np.diag([1.0, 4.0])).weights, [0.8, 0.2], atol=1e-14)

    def test_correlated(self):
        A = np.array([[1.0, 0.5], [0.5, 2.0]])
        np.testing.assert_allclose(mva_weights(A).weights, [0.75, 0.25], atol=1e-14)

    def test_matches_grid_search(self):
        A = np.array([[1.0, 0.5], [0.5, 2.0]])
        grid = np.arange(-2.0, 3.0, 1e-4)
        candidates = np.column_stack([grid, 1.0 - grid])
        values = np.einsum('ij,jk,ik->i', candidates, A, candidates)
        best = candidates[np.argmin(values)]
        np.testing.assert_allclose(mva_weights(A).weights, best, atol=1e-4)

    def test_not_positive_definite(self):
        with pytest.raises(SingularCovariance):
            mva_weights(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_empty_bank(self):
        with pytest.raises(EmptyBank):
            mva_weights(np.zeros((0, 0)))

    def test_non_symmetric(self):
        with pytest.raises(InvalidInput):
            mva_weights(np.array([[1.0, 0.3], [0.0, 1.0]]))

    def test_sum_and_kkt_on_random_matrices(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 7))
            A = random_spd(rng, n)
            alpha = mva_weights(A).weights
            assert abs(alpha.sum() - 1.0) <= 1e-10
            kkt = np.block([[2 * A, np.ones((n, 1))], [np.ones((1, n)), np.zeros((1, 1))]])
            reference = np.linalg.solve(kkt, np.concatenate([np.zeros(n), [1.0]]))[:n]
            np.testing.assert_allclose(alpha, reference, rtol=1e-6, atol=1e-6)

    def test_beats_random_feasible_vectors(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(2, 7))
            A = random_spd(rng, n)
            alpha = mva_weights(A).weights
            optimum = alpha @ A @ alpha
            perturbations = rng.normal(size=(100_000, n))
            perturbations -= perturbations.mean(axis=1, keepdims=True)
            candidates = alpha + perturbations * rng.uniform(1e-3, 1.0, size=(100_000, 1))
            values = np.einsum('ij,jk,ik->i', candidates, A, candidates)
            assert optimum <= values.min() * (1.0 + 1e-9)


class TestSoftmaxWeights:

    def test_uniform(self):
        np.testing.assert_allclose(softmax_weights([0.0, 0.0, 0.0]).weights, [1 / 3] * 3, atol=1e-15)

    def test_matches_diagonal_mva(self):
        np.testing.assert_allclose(softmax_weights([0.0, np.log(4.0)]).weights, [0.8, 0.2], atol=1e-14)

    def test_large_spread_without_overflow(self):
        with np.errstate(over='raise'):
            weights = softmax_weights([0.0, 1000.0]).weights
        np.testing.assert_array_equal(weights, [1.0, 0.0])

    def test_strictly_positive_for_moderate_spread(self):
        rng = np.random.default_rng(2)
        assert np.all(softmax_weights(rng.normal(size=8)).weights > 0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            log_vars = rng.normal(scale=5.0, size=5)
            shift = rng.normal(scale=50.0)
            np.testing.assert_allclose(softmax_weights(log_vars + shift).weights,
                                       softmax_weights(log_vars).weights, atol=1e-12)

    def test_equals_mva_of_diagonal(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            log_vars = rng.uniform(-3.0, 3.0, size=4)
            np.testing.assert_allclose(softmax_weights(log_vars).weights,
                                       mva_weights(np.diag(np.exp(log_vars))).weights, atol=1e-12)

    def test_non_finite(self):
        with pytest.raises(InvalidInput):
            softmax_weights([0.0, np.nan])


class TestRotatedWeights:

    def test_identity_basis(self):
        weights = rotated_weights(CovarianceModel(np.array([0.0, np.log(4.0)])))
        np.testing.assert_allclose(weights.weights, [0.8, 0.2], atol=1e-14)

    def test_permutation_basis(self):
        swap = np.array([[0.0, 1.0], [1.0, 0.0]])
        weights = rotated_weights(CovarianceModel(np.array([np.log(4.0), 0.0]), swap))
        np.testing.assert_allclose(weights.weights, [0.8, 0.2], atol=1e-14)

    def test_rotation_matches_dense_covariance(self):
        P = rotation(np.pi / 4)
        log_vars = np.array([0.0, np.log(4.0)])
        dense = P.T @ np.diag(np.exp(log_vars)) @ P
        weights = rotated_weights(CovarianceModel(log_vars, P)).weights
        np.testing.assert_allclose(weights, mva_weights(dense).weights, atol=1e-12)
        assert abs(weights.sum() - 1.0) <= 1e-12

    def test_random_rotations_match_dense_covariance(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(2, 6))
            P, _ = np.linalg.qr(rng.normal(size=(n, n)))
            log_vars = rng.uniform(-2.0, 2.0, size=n)
            model = CovarianceModel(log_vars, P.T)
            np.testing.assert_allclose(rotated_weights(model).weights,
                                       mva_weights(model.matrix()).weights, atol=1e-9)

    def test_identity_basis_equals_softmax(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            log_vars = rng.normal(scale=3.0, size=int(rng.integers(1, 7)))
            np.testing.assert_allclose(rotated_weights(CovarianceModel(log_vars)).weights,
                                       softmax_weights(log_vars).weights, atol=1e-12)

    def test_degenerate_denominator(self):
        # P 1 = (sqrt 2, 0): all precision sits on the component orthogonal to 1
        model = CovarianceModel(np.array([1000.0, 0.0]), rotation(np.pi / 4).T)
        with pytest.raises(DegenerateRotation):
            rotated_weights(model)

    def test_rejects_non_orthonormal_basis(self):
        with pytest.raises(InvalidInput):
            CovarianceModel(np.zeros(2), np.array([[1.0, 0.1], [0.0, 1.0]]))


class TestMeaWeights:

    def test_identity_moments(self):
        np.testing.assert_allclose(mea_weights(SecondMoments(np.eye(2), np.array([1.0, 0.0]))), [1.0, 0.0])

    def test_normal_equations(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(1, 7))
            C = random_spd(rng, n)
            gamma = rng.normal(size=n)
            alpha = mea_weights(SecondMoments(C, gamma))
            assert np.linalg.norm(C @ alpha - gamma) <= 1e-8 * np.linalg.norm(gamma)

    def test_matches_monte_carlo_least_squares(self):
        rng = np.random.default_rng(8)
        n_draws = 400_000
        scales = np.array([0.3, 0.6, 1.0])
        Y = rng.normal(size=n_draws)
        M = Y[:, None] * np.array([1.0, 0.9, 1.1]) + rng.normal(size=(n_draws, 3)) * scales
        factors = np.array([1.0, 0.9, 1.1])
        C = np.outer(factors, factors) + np.diag(scales ** 2)
        gamma = factors
        exact = mea_weights(SecondMoments(C, gamma))
        empirical = np.linalg.lstsq(M, Y, rcond=None)[0]
        np.testing.assert_allclose(empirical, exact, atol=0.02)

    def test_not_renormalized(self):
        alpha = mea_weights(SecondMoments(2.0 * np.eye(2), np.array([1.0, 0.0])))
        assert abs(alpha.sum() - 1.0) > 0.1

    def test_singular(self):
        with pytest.raises(SingularCovariance):
            mea_weights(SecondMoments(np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones(2)))


class TestAggregatePointwise:

    def test_selector(self):
        assert aggregate_pointwise(WeightVector(np.array([1.0, 0.0])), [3.7, -9.0]) == 3.7

    def test_mean(self):
        assert aggregate_pointwise(np.full(3, 1 / 3), [1.0, 2.0, 3.0]) == pytest.approx(2.0, abs=1e-15)

    def test_arithmetic(self):
        assert aggregate_pointwise([0.75, 0.25], [2.0, -2.0]) == pytest.approx(1.0, abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(InvalidInput):
            aggregate_pointwise([0.5, 0.5], [1.0, 2.0, 3.0])


class TestHelpers:

    def test_cholesky_nugget_retry_on_semidefinite_matrix(self):
        A = np.ones((3, 3))
        x = cholesky_solve(A, np.ones(3))
        np.testing.assert_allclose(A @ x, np.ones(3), rtol=1e-6)

    def test_with_constant_model(self):
        values = with_constant_model(np.array([[1.0, 2.0], [3.0, 4.0]]), constant=1.0)
        np.testing.assert_array_equal(values, [[1.0, 2.0, 1.0], [3.0, 4.0, 1.0]])

    def test_empirical_error_basis_diagonalizes(self):
        rng = np.random.default_rng(9)
        errors = rng.normal(size=(200, 3)) @ np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.3], [0.0, 0.0, 1.0]])
        P = empirical_error_basis(errors)
        np.testing.assert_allclose(P @ P.T, np.eye(3), atol=1e-12)
        rotated = P @ (errors.T @ errors / len(errors)) @ P.T
        np.testing.assert_allclose(rotated - np.diag(np.diag(rotated)), 0.0, atol=1e-12)


class TestModelBank:

    def test_stacks_columns_in_order(self):
        bank = ModelBank.from_dict({'double': lambda X: 2 * X[:, 0], 'one': lambda X: np.ones(len(X))})
        values = bank(np.array([[1.0], [2.0]]))
        np.testing.assert_array_equal(values, [[2.0, 1.0], [4.0, 1.0]])
        assert bank.subset(['one']).names == ['one']

    def test_duplicate_names(self):
        bank = ModelBank()
        bank.add('a', lambda X: X)
        with pytest.raises(InvalidInput):
            bank.add('a', lambda X: X)

    def test_empty_bank(self):
        with pytest.raises(EmptyBank):
            ModelBank()(np.zeros((2, 1)))
