"""Tests for MEVA, MEEA and direct variance fits."""

import numpy as np
import pytest

from app.experiments.pathological import cosine_target, sample_outer_points
from app.kernels.kernels import KernelSpec, gram
from app.training.direct_loss import direct_objective, fit_direct_mva
from app.training.meea_trainer import fit_meea, fit_meea_linear, fit_meea_softmax
from app.training.meva_trainer import (
    SQUARED_ERROR_FLOOR,
    covariance_objective,
    fit_meva_gn,
    fit_meva_sharp,
    predict,
)
from app.training.samples import ErrorSamples
from app.utils.exceptions import InvalidInput


def noisy_bank_samples(rng, N=40, noise=(0.05, 0.3, 1.0)):
    X = rng.uniform(-1, 1, size=(N, 1))
    Y = np.sin(3 * X[:, 0])
    values = Y[:, None] + rng.normal(size=(N, len(noise))) * np.asarray(noise)
    return ErrorSamples(X, values, Y)


class TestErrorSamples:

    def test_errors(self):
        s = ErrorSamples([[0.0], [1.0]], [[1.0, 2.0], [3.0, 5.0]], [1.0, 4.0])
        np.testing.assert_array_equal(s.errors, [[0.0, 1.0], [-1.0, 1.0]])

    def test_row_mismatch(self):
        with pytest.raises(InvalidInput):
            ErrorSamples([[0.0]], [[1.0, 2.0], [3.0, 5.0]], [1.0, 4.0])


class TestFitMevaSharp:

    def test_single_exact_model(self):
        X = np.linspace(0, 1, 5)[:, None]
        Y = np.cos(X[:, 0])
        agg = fit_meva_sharp(ErrorSamples(X, Y[:, None], Y), KernelSpec('rbf', 0.3), 1e-3)
        np.testing.assert_allclose(agg.log_vars(X)[:, 0], np.log(SQUARED_ERROR_FLOOR), rtol=1e-12)
        np.testing.assert_array_equal(agg.weights(X), 1.0)

    def test_tenfold_error_gives_hundredfold_variance(self):
        rng = np.random.default_rng(21)
        X = np.linspace(0, 1, 8)[:, None]
        e1 = rng.uniform(0.1, 1.0, size=8) * rng.choice([-1.0, 1.0], size=8)
        Y = np.zeros(8)
        s = ErrorSamples(X, np.column_stack([e1, 10 * e1]), Y)
        agg = fit_meva_sharp(s, KernelSpec('rbf', 0.2), 1e-12)
        log_vars = agg.log_vars(X)
        np.testing.assert_allclose(log_vars[:, 1] - log_vars[:, 0], np.log(100.0), atol=1e-4)
        np.testing.assert_allclose(agg.weights(X)[:, 0], 100.0 / 101.0, atol=1e-5)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(22)
        s = noisy_bank_samples(rng)
        spec = KernelSpec('matern32', 0.5)
        order = [2, 0, 1]
        agg = fit_meva_sharp(s, spec, 1e-2)
        permuted = fit_meva_sharp(s.permute_models(order), spec, 1e-2)
        Xt = rng.uniform(-1, 1, size=(10, 1))
        values = rng.normal(size=(10, 3))
        np.testing.assert_allclose(permuted.log_vars(Xt), agg.log_vars(Xt)[:, order], atol=1e-10)
        np.testing.assert_allclose(permuted.predict(Xt, values[:, order]), agg.predict(Xt, values), atol=1e-10)

    def test_common_shift_leaves_weights_unchanged(self):
        rng = np.random.default_rng(23)
        s = noisy_bank_samples(rng)
        shifted = ErrorSamples(s.inputs, s.model_values + 7.5, s.targets + 7.5)
        spec = KernelSpec('rbf', 0.4)
        Xt = rng.uniform(-1, 1, size=(10, 1))
        np.testing.assert_allclose(fit_meva_sharp(shifted, spec, 1e-2).weights(Xt),
                                   fit_meva_sharp(s, spec, 1e-2).weights(Xt), atol=1e-10)

    def test_convex_combination_and_unit_sum(self):
        rng = np.random.default_rng(24)
        agg = fit_meva_sharp(noisy_bank_samples(rng), KernelSpec('rbf', 0.3), 1e-3)
        Xt = rng.uniform(-2, 2, size=(50, 1))
        values = rng.normal(size=(50, 3))
        prediction = agg.predict(Xt, values)
        np.testing.assert_allclose(agg.weights(Xt).sum(axis=1), 1.0, atol=1e-12)
        assert np.all(prediction >= values.min(axis=1) - 1e-12)
        assert np.all(prediction <= values.max(axis=1) + 1e-12)

    def test_prefers_accurate_model(self):
        rng = np.random.default_rng(25)
        agg = fit_meva_sharp(noisy_bank_samples(rng, N=80), KernelSpec('rbf', 0.5), 1e-2)
        weights = agg.weights(np.linspace(-1, 1, 20)[:, None])
        assert np.all(weights[:, 0] > weights[:, 1])
        assert np.all(weights[:, 1] > weights[:, 2])

    def test_rotated_basis(self):
        rng = np.random.default_rng(26)
        s = noisy_bank_samples(rng)
        P, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        agg = fit_meva_sharp(s, KernelSpec('rbf', 0.5), 1e-2, basis=P)
        np.testing.assert_allclose(agg.weights(s.inputs).sum(axis=1), 1.0, atol=1e-10)

    def test_single_point_predict_matches_batch(self):
        rng = np.random.default_rng(27)
        agg = fit_meva_sharp(noisy_bank_samples(rng), KernelSpec('rbf', 0.3), 1e-3)
        x, values = np.array([0.2]), np.array([1.0, 2.0, -1.0])
        weights, value = predict(agg, x, values)
        np.testing.assert_allclose(weights.weights, agg.weights(x[None, :])[0], atol=1e-14)
        assert value == pytest.approx(agg.predict(x[None, :], values[None, :])[0], abs=1e-14)

    def test_selector_and_mean_cases(self):
        X = np.array([[0.0], [0.5], [1.0]])
        Y = np.zeros(3)
        # Model 0 exact, model 1 far off: weights collapse onto model 0
        agg = fit_meva_sharp(ErrorSamples(X, np.column_stack([Y, Y + 1.0]), Y), KernelSpec('rbf', 0.5), 1e-6)
        weights, value = predict(agg, [0.5], [3.7, -9.0])
        np.testing.assert_allclose(weights.weights, [1.0, 0.0], atol=1e-12)
        assert value == pytest.approx(3.7, abs=1e-10)
        # Identical error profiles: uniform weights
        same = fit_meva_sharp(ErrorSamples(X, np.column_stack([Y + 1, Y - 1, Y + 1]), Y), KernelSpec('rbf', 0.5), 1e-6)
        _, mean_value = predict(same, [0.5], [1.0, 2.0, 3.0])
        assert mean_value == pytest.approx(2.0, abs=1e-12)

    def test_centering_offset_is_mean_log_squared_error(self):
        rng = np.random.default_rng(31)
        s = noisy_bank_samples(rng)
        spec = KernelSpec('rbf', 0.3)
        centered = fit_meva_sharp(s, spec, 1e-3)
        pure = fit_meva_sharp(s, spec, 1e-3, center=False)
        np.testing.assert_allclose(centered.log_var_model.offset, np.mean(np.log(s.errors ** 2), axis=0))
        np.testing.assert_array_equal(pure.log_var_model.offset, 0.0)
        K = gram(spec, s.inputs)
        np.testing.assert_allclose((K + 1e-3 * len(K) * np.eye(len(K))) @ pure.log_var_model.coefficients,
                                   np.log(s.errors ** 2), rtol=1e-8, atol=1e-8)


class TestFitMevaGaussNewton:

    def test_unit_errors_are_a_fixed_point(self):
        X = np.linspace(0, 1, 6)[:, None]
        Y = np.zeros(6)
        s = ErrorSamples(X, np.column_stack([Y + 1.0, Y - 1.0]), Y)
        spec = KernelSpec('rbf', 0.3)
        sharp = fit_meva_sharp(s, spec, 1e-6)
        gn = fit_meva_gn(s, spec, 1e-6, iters=10)
        assert len(gn.history) == 1
        np.testing.assert_allclose(gn.log_vars(X), sharp.log_vars(X), atol=1e-12)

    def test_constant_hypothesis_mean_of_squares(self):
        # Coincident inputs make every function in the span constant on the samples
        X = np.zeros((3, 1))
        Y = np.zeros(3)
        s = ErrorSamples(X, np.array([[1.0], [2.0], [3.0]]), Y)
        gn = fit_meva_gn(s, KernelSpec('rbf', 1.0), 1e-3, iters=100)
        assert np.exp(gn.log_vars([[0.0]])[0, 0]) == pytest.approx(14.0 / 3.0, rel=1e-4)

    def test_history_non_increasing_and_beats_initializer(self):
        rng = np.random.default_rng(28)
        s = noisy_bank_samples(rng, N=60)
        spec = KernelSpec('rbf', 0.3)
        sharp = fit_meva_sharp(s, spec, 1e-3)
        gn = fit_meva_gn(s, spec, 1e-3, iters=30)
        assert all(b <= a for a, b in zip(gn.history, gn.history[1:]))
        assert gn.history[0] == pytest.approx(covariance_objective(sharp, s), rel=1e-7)
        assert covariance_objective(gn, s) <= covariance_objective(sharp, s) * (1 + 1e-8)
        assert gn.loss_kind == 'covariance'

    def test_gap_configuration_beats_sharp_initializer(self):
        rng = np.random.default_rng(30)
        x = sample_outer_points(rng, 100)
        y = cosine_target(x)
        values = np.column_stack([y + 0.3 * rng.normal(size=100), np.full(100, 3.0), np.full(100, -3.0)])
        s = ErrorSamples(x, values, y)
        spec = KernelSpec('rbf', 0.1)
        sharp = fit_meva_sharp(s, spec, 1e-3)
        gn = fit_meva_gn(s, spec, 1e-3)
        assert all(b <= a for a, b in zip(gn.history, gn.history[1:]))
        assert covariance_objective(gn, s) <= covariance_objective(sharp, s) * (1 + 1e-8)

    def test_rejects_zero_iterations(self):
        rng = np.random.default_rng(29)
        with pytest.raises(InvalidInput):
            fit_meva_gn(noisy_bank_samples(rng), KernelSpec('rbf', 0.3), 1e-3, iters=0)


class TestFitMeea:

    def test_interpolates_with_zero_reg(self):
        rng = np.random.default_rng(30)
        X = np.linspace(-1, 1, 10)[:, None]
        Y = np.sin(3 * X[:, 0])
        values = 2.0 + Y[:, None] + rng.normal(size=(10, 2)) * np.array([0.1, 0.5])
        s = ErrorSamples(X, values, Y)
        meea = fit_meea(s, KernelSpec('rbf', 0.3), 0.0)
        np.testing.assert_allclose(meea.predict(s.inputs, s.model_values), s.targets, atol=1e-8)

    def test_matches_dense_reimplementation(self):
        rng = np.random.default_rng(31)
        for _ in range(5):
            s = noisy_bank_samples(rng, N=10, noise=(0.2, 0.4))
            spec = KernelSpec('matern32', 0.6)
            meea = fit_meea(s, spec, 0.01)
            ktilde = gram(spec, s.inputs) * (s.model_values @ s.model_values.T)
            c = np.linalg.solve(ktilde + 0.01 * 10 * np.eye(10), s.targets)
            np.testing.assert_allclose(meea.predict(s.inputs, s.model_values), ktilde @ c, atol=1e-10)

    def test_linear_weights_recover_affine_truth(self):
        rng = np.random.default_rng(32)
        X = rng.uniform(-1, 1, size=(30, 1))
        values = rng.normal(size=(30, 2))
        Y = (0.5 * X[:, 0] + 0.2) * values[:, 0] + (-1.0 * X[:, 0] + 0.8) * values[:, 1]
        linear = fit_meea_linear(ErrorSamples(X, values, Y))
        np.testing.assert_allclose(linear.slopes[:, 0], [0.5, -1.0], atol=1e-10)
        np.testing.assert_allclose(linear.intercepts, [0.2, 0.8], atol=1e-10)

    def test_softmax_weights_are_convex_and_descend(self):
        rng = np.random.default_rng(33)
        X = rng.uniform(-1, 1, size=(30, 1))
        Y = np.sin(3 * X[:, 0])
        values = np.column_stack([Y + 0.1 * rng.normal(size=30), np.full(30, 1.0), np.full(30, -1.0)])
        meea = fit_meea_softmax(ErrorSamples(X, values, Y), KernelSpec('rbf', 0.3), 1e-4, iters=50)
        assert all(b <= a for a, b in zip(meea.history, meea.history[1:]))
        assert meea.history[-1] < meea.history[0]
        np.testing.assert_allclose(meea.weights(X).sum(axis=1), 1.0, atol=1e-12)


class TestFitDirectMva:

    def test_single_model(self):
        X = np.zeros((4, 1))
        s = ErrorSamples(X, np.ones((4, 1)), np.zeros(4))
        agg = fit_direct_mva(s, KernelSpec('rbf', 1.0), 0.0, steps=100, lr=1.0)
        np.testing.assert_array_equal(agg.weights(X), 1.0)
        assert len(agg.history) == 1

    def test_single_sample_optimum(self):
        s = ErrorSamples([[0.0]], [[1.0, 2.0]], [0.0])
        agg = fit_direct_mva(s, KernelSpec('rbf', 1.0), 0.0, steps=2000, lr=1.0)
        np.testing.assert_allclose(agg.weights([[0.0]])[0], [0.8, 0.2], atol=1e-6)
        assert agg.history[-1] == pytest.approx(0.8, abs=1e-10)

    def test_descent_from_uniform(self):
        rng = np.random.default_rng(34)
        s = noisy_bank_samples(rng, N=50)
        spec = KernelSpec('rbf', 0.4)
        agg = fit_direct_mva(s, spec, 1e-3, steps=200, lr=1.0)
        uniform = direct_objective(np.zeros((50, 3)), gram(spec, s.inputs), s.errors ** 2, 1e-3)
        assert agg.history[0] == pytest.approx(uniform)
        assert agg.history[-1] <= uniform
        assert all(b <= a for a, b in zip(agg.history, agg.history[1:]))

    def test_analytic_gradient_matches_finite_differences(self):
        from app.training.direct_loss import _gradient

        rng = np.random.default_rng(35)
        s = noisy_bank_samples(rng, N=6)
        K = gram(KernelSpec('rbf', 0.5), s.inputs)
        C = rng.normal(scale=0.3, size=(6, 3))
        squared = s.errors ** 2
        analytic = _gradient(C, K, squared, 0.01)
        numeric = np.zeros_like(C)
        h = 1e-6
        for idx in np.ndindex(C.shape):
            bump = np.zeros_like(C)
            bump[idx] = h
            numeric[idx] = (direct_objective(C + bump, K, squared, 0.01)
                            - direct_objective(C - bump, K, squared, 0.01)) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)
