"""Tests for CSV ingestion, splitting, the base learners and the tabular benchmark."""

import numpy as np
import pytest

from app.tabular.dataset import Standardizer, load_csv, split, synthetic_regression, write_csv
from app.tabular.learners import GradientBoostingLearner, KnnLearner, KrrLearner, RidgeLearner, make_learner
from app.tabular.tabular_experiment import (
    REPORT_COLUMNS,
    SUMMARY_COLUMNS,
    TabularSettings,
    run_tabular_experiment,
)
from app.utils.exceptions import InvalidInput, MissingColumn, ParseError


def friedman(X):
    return (10.0 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20.0 * (X[:, 2] - 0.5) ** 2
            + 10.0 * X[:, 3] + 5.0 * X[:, 4])


class OracleLearner:
    """Predicts the noise-free target exactly."""

    def fit(self, X, y):
        return self

    def predict(self, X):
        return friedman(np.asarray(X, dtype=float))

    def __call__(self, X):
        return self.predict(X)


class TestLoadCsv:

    def test_small_file(self, tmp_path):
        path = tmp_path / 'data.csv'
        path.write_text("a,b,y\n1,2,3\n4,5,6\n7,8.5,-9\n")
        ds = load_csv(path, 'y')
        np.testing.assert_array_equal(ds.features, [[1, 2], [4, 5], [7, 8.5]])
        np.testing.assert_array_equal(ds.targets, [3, 6, -9])
        assert ds.columns == ('a', 'b')
        assert ds.dropped_rows == 0

    def test_missing_cell_drops_row(self, tmp_path):
        path = tmp_path / 'data.csv'
        path.write_text("a,b,y\n1,2,3\n4,,6\n7,8,9\n")
        ds = load_csv(path, 'y')
        assert ds.dropped_rows == 1
        np.testing.assert_array_equal(ds.features, [[1, 2], [7, 8]])
        np.testing.assert_array_equal(ds.indices, [0, 2])

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / 'data.csv'
        path.write_text("a,b,y\n1,2,3\n1,x,3\n")
        with pytest.raises(ParseError) as info:
            load_csv(path, 'y')
        assert info.value.row == 2
        assert info.value.column == 'b'

    def test_missing_target(self, tmp_path):
        path = tmp_path / 'data.csv'
        path.write_text("a,b\n1,2\n")
        with pytest.raises(MissingColumn):
            load_csv(path, 'y')

    def test_write_then_read(self, tmp_path):
        ds = synthetic_regression(np.random.default_rng(0), n=30, d=6)
        path = write_csv(ds, tmp_path / 'out' / 'data.csv')
        loaded = load_csv(path, 'y')
        np.testing.assert_array_equal(loaded.features, ds.features)
        np.testing.assert_array_equal(loaded.targets, ds.targets)
        assert loaded.columns == ds.columns


class TestSplit:

    def test_all_train(self):
        ds = synthetic_regression(np.random.default_rng(1), n=20)
        train, val, test = split(ds, (1.0, 0.0, 0.0), np.random.default_rng(0))
        assert len(train) == 20 and len(val) == 0 and len(test) == 0

    def test_disjoint_cover(self):
        ds = synthetic_regression(np.random.default_rng(2), n=101)
        parts = split(ds, (0.6, 0.2, 0.2), np.random.default_rng(3))
        indices = np.concatenate([part.indices for part in parts])
        np.testing.assert_array_equal(np.sort(indices), np.arange(101))
        for part, ratio in zip(parts, (0.6, 0.2, 0.2)):
            assert abs(len(part) - 101 * ratio) <= 1

    def test_seeded(self):
        ds = synthetic_regression(np.random.default_rng(4), n=50)
        a = split(ds, (0.6, 0.2, 0.2), np.random.default_rng(5))
        b = split(ds, (0.6, 0.2, 0.2), np.random.default_rng(5))
        for part_a, part_b in zip(a, b):
            np.testing.assert_array_equal(part_a.indices, part_b.indices)

    def test_ratios_must_sum_to_one(self):
        ds = synthetic_regression(np.random.default_rng(6), n=10)
        with pytest.raises(InvalidInput):
            split(ds, (0.6, 0.2, 0.3), np.random.default_rng(0))


class TestStandardizer:

    def test_train_statistics(self):
        X = np.random.default_rng(7).normal(loc=3.0, scale=[1.0, 5.0, 0.1], size=(200, 3))
        Z = Standardizer().fit_transform(X)
        assert np.all(np.abs(Z.mean(axis=0)) <= 1e-10)
        np.testing.assert_allclose(Z.std(axis=0), 1.0, atol=1e-10)

    def test_used_before_fit(self):
        with pytest.raises(InvalidInput):
            Standardizer().transform(np.ones((2, 2)))


class TestLearners:

    def test_ridge_recovers_linear_model(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(50, 3))
        y = X @ np.array([1.0, -2.0, 0.5]) + 3.0
        slopes, intercept = RidgeLearner(reg=0.0).fit(X, y).coefficients
        np.testing.assert_allclose(slopes, [1.0, -2.0, 0.5], atol=1e-8)
        np.testing.assert_allclose(intercept, 3.0, atol=1e-8)

    def test_knn_single_neighbour_returns_own_target(self):
        rng = np.random.default_rng(9)
        X, y = rng.normal(size=(40, 4)), rng.normal(size=40)
        np.testing.assert_array_equal(KnnLearner(k=1).fit(X, y).predict(X), y)

    def test_knn_k_larger_than_data(self):
        X, y = np.arange(3.0)[:, None], np.array([1.0, 2.0, 6.0])
        np.testing.assert_allclose(KnnLearner(k=10).fit(X, y).predict([[0.5]]), [3.0])

    def test_boosting_descends(self):
        ds = synthetic_regression(np.random.default_rng(10), n=120)
        learner = GradientBoostingLearner(rounds=60).fit(ds.features, ds.targets)
        assert np.all(np.diff(learner.train_mse) <= 1e-12)
        np.testing.assert_allclose(np.mean((learner.predict(ds.features) - ds.targets) ** 2),
                                   learner.train_mse[-1], rtol=1e-10)

    def test_boosting_solves_xor(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([0.0, 1.0, 1.0, 0.0])
        learner = GradientBoostingLearner(rounds=50).fit(X, y)
        assert np.mean((learner.predict(X) - y) ** 2) < 0.01

    def test_krr_beats_mean(self):
        ds = synthetic_regression(np.random.default_rng(11), n=150, noise=0.1)
        prediction = KrrLearner().fit(ds.features, ds.targets).predict(ds.features)
        assert np.mean((prediction - ds.targets) ** 2) < 0.5 * np.var(ds.targets)

    def test_empty_fit(self):
        for kind in ('ridge', 'knn', 'gbt', 'krr'):
            with pytest.raises(InvalidInput):
                make_learner(kind).fit(np.empty((0, 2)), np.empty(0))

    def test_unknown_kind(self):
        with pytest.raises(InvalidInput):
            make_learner('forest')

    def test_predict_is_deterministic(self):
        ds = synthetic_regression(np.random.default_rng(12), n=60)
        learner = make_learner('gbt', {'rounds': 20}).fit(ds.features, ds.targets)
        np.testing.assert_array_equal(learner.predict(ds.features), learner.predict(ds.features))


class TestTabularExperiment:

    def test_planted_oracle(self):
        ds = synthetic_regression(np.random.default_rng(13), n=120, noise=0.0)
        settings = TabularSettings(learners=('ridge', 'oracle'), n_splits=2, seed=1)
        report = run_tabular_experiment(ds, settings, factories={'oracle': OracleLearner})
        records = report.records
        meva = records[records['method'] == 'meva']['test_mse'].to_numpy()
        oracle = records[(records['method'] == 'oracle') & (records['scope'] == 'train')]['test_mse'].to_numpy()
        assert np.all(meva <= oracle + 1e-6)

    def test_schema_and_reproducibility(self):
        ds = synthetic_regression(np.random.default_rng(14), n=80)
        settings = TabularSettings(learners=('ridge', 'knn'), n_splits=2, seed=2)
        a = run_tabular_experiment(ds, settings)
        b = run_tabular_experiment(ds, settings)
        assert list(a.records.columns) == REPORT_COLUMNS
        assert list(a.summary.columns) == SUMMARY_COLUMNS
        assert a.records.equals(b.records)
        # 2 train + 4 aggregate + 2 train+val rows per split
        assert len(a.records) == 16
        base_rows = a.summary[a.summary['scope'] != 'aggregate']
        assert base_rows['r_train'].isna().all()

    def test_needs_two_learners(self):
        with pytest.raises(InvalidInput):
            TabularSettings(learners=('ridge',))

    def test_unknown_learner_fails_with_context(self):
        ds = synthetic_regression(np.random.default_rng(15), n=40)
        with pytest.raises(InvalidInput, match='split 0'):
            run_tabular_experiment(ds, TabularSettings(learners=('ridge', 'forest'), n_splits=1))
