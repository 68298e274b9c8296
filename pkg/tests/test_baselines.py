import numpy as np
import pytest
from scipy import integrate

from gcshift.baselines import (
    BANDWIDTH_GRID,
    KdeModel,
    KnnModel,
    kde_density,
    kde_ratio_weights,
    knn_eta,
    maity_ic,
    maity_pc,
    saerens_classifier,
    tune_bandwidth,
    tune_neighbors,
)
from gcshift.data import Dataset, class_proportions


def _ds(x, y, k=2):
    return Dataset(np.asarray(x, dtype=float).reshape(len(y), -1), np.asarray(y), k=k)


class TestKde:
    def test_single_point(self):
        m = KdeModel((np.array([[0.3]]),), 1.0)
        assert kde_density(m, 1, np.array([0.3]))[0] == pytest.approx(1 / np.sqrt(2 * np.pi))
        assert kde_density(m, 1, np.array([0.3]))[0] == pytest.approx(0.39894, abs=1e-5)

    def test_two_points_midpoint(self):
        m = KdeModel((np.array([[0.0], [1.0]]),), 1.0)
        assert kde_density(m, 1, np.array([0.5]))[0] == pytest.approx(0.35207, abs=1e-5)

    def test_integrates_to_one(self, rng):
        pts = rng.random((7, 1))
        m = KdeModel((pts,), 0.1)
        val, _ = integrate.quad(lambda t: kde_density(m, 1, np.array([t]))[0], -2, 3, limit=200)
        assert val == pytest.approx(1.0, abs=1e-8)

    def test_integrates_to_one_2d(self, rng):
        m = KdeModel((rng.random((3, 2)),), 0.2)
        val, _ = integrate.dblquad(lambda a, b: kde_density(m, 1, np.array([a, b]))[0],
                                   -1.5, 2.5, -1.5, 2.5, epsabs=1e-10)
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_wide_bandwidth_flat(self, rng):
        data = _ds(rng.random(20), np.array([1, 2] * 10))
        m = KdeModel.fit(data, 1e6)
        x = rng.random((5, 1))
        assert np.all(kde_density(m, 1, x) < 1e-5)
        np.testing.assert_allclose(kde_ratio_weights(m, x).r[:, 0], 1.0, rtol=1e-9)

    def test_underflow_handled(self):
        m = KdeModel((np.array([[0.0]]), np.array([[1.0]])), 0.01)
        r = kde_ratio_weights(m, np.array([[0.0], [1.0]]))
        assert np.all(np.isfinite(r.r)) and np.all(r.r > 0)

    def test_bad_bandwidth(self):
        with pytest.raises(ValueError):
            KdeModel((np.zeros((1, 1)),), 0.0)


class TestMaity:
    def _separated(self):
        return _ds([0.1, 0.2, 0.8, 0.9], [1, 1, 2, 2])

    def test_pc_separated_classes(self, rng):
        target = Dataset(0.15 + 0.01 * rng.standard_normal((40, 1)))
        clf = maity_pc(self._separated(), target, 0.05)
        assert clf.prior[0] > 0.9

    def test_pc_identical_classes_degenerate(self, rng):
        x = rng.random(10)
        source = _ds(np.r_[x, x], np.r_[np.ones(10, int), np.full(10, 2)])
        clf = maity_pc(source, Dataset(rng.random((30, 1))), 0.1)
        assert clf.estimate.degenerate
        np.testing.assert_allclose(clf.prior, [0.5, 0.5])

    def test_ic_counts_labels(self):
        tgt = _ds([0.1, 0.2, 0.3, 0.4], [1, 1, 2, 2])
        np.testing.assert_allclose(maity_ic(self._separated(), tgt, 0.05).prior, [0.5, 0.5])

    def test_ic_vertex_prior(self, rng):
        tgt = _ds(0.15 + 0.01 * rng.standard_normal(20), np.ones(20, int))
        clf = maity_ic(self._separated(), tgt, 0.05)
        assert np.all(clf.predict(rng.random((50, 1))) == 1)


class TestKnn:
    def test_exact_match(self):
        m = KnnModel.fit(_ds([0.1, 0.5, 0.9], [1, 2, 1]), 1)
        np.testing.assert_array_equal(knn_eta(m, np.array([0.5])), [[0.0, 1.0]])

    def test_three_neighbours(self):
        m = KnnModel.fit(_ds([0.0, 0.1, 0.2, 5.0], [1, 1, 2, 2]), 3)
        np.testing.assert_allclose(knn_eta(m, np.array([0.05])), [[2 / 3, 1 / 3]])

    def test_global_vote(self, rng):
        data = _ds(rng.random(15), rng.integers(1, 4, 15), k=3)
        m = KnnModel.fit(data, 15)
        np.testing.assert_allclose(m.eta(rng.random((4, 1))), np.tile(class_proportions(data), (4, 1)))

    def test_distance_tie_lower_index(self):
        m = KnnModel.fit(_ds([0.0, 1.0], [2, 1]), 1)
        # query equidistant from both: row 0 wins
        np.testing.assert_array_equal(m.eta(np.array([0.5])), [[0.0, 1.0]])

    def test_neighbors_range(self):
        with pytest.raises(ValueError):
            KnnModel.fit(_ds([0.0, 1.0], [1, 2]), 3)


class TestSaerens:
    def test_no_shift(self, rng):
        n = 300
        y = np.where(rng.random(n) < 0.7, 1, 2)
        x = np.clip(np.where(y == 1, 0.3, 0.7) + 0.15 * rng.standard_normal(n), 0, 1)
        src = _ds(x, y)
        clf = saerens_classifier(src, Dataset(src.features), 11)
        assert np.max(np.abs(clf.prior - class_proportions(src))) < 0.05
        knn_pred = np.argmax(clf.knn.eta(src.features), axis=1) + 1
        assert np.mean(clf.predict(src.features) == knn_pred) > 0.95

    def test_constant_posteriors_keep_prior(self, rng):
        src = _ds(rng.random(12), np.r_[np.ones(8, int), np.full(4, 2)])
        clf = saerens_classifier(src, Dataset(rng.random((20, 1))), 12)
        assert clf.estimate.degenerate
        np.testing.assert_allclose(clf.prior, [8 / 12, 4 / 12])


class TestTuning:
    def test_bandwidth_from_grid(self, rng):
        n = 200
        y = np.where(rng.random(n) < 0.5, 1, 2)
        x = np.where(y == 1, 0.3, 0.7) + 0.1 * rng.standard_normal(n)
        b = tune_bandwidth(_ds(x, y), seed=1)
        assert b in BANDWIDTH_GRID
        assert b == tune_bandwidth(_ds(x, y), seed=1)

    def test_neighbors_capped_by_sample(self, rng):
        data = _ds(rng.random(20), np.r_[np.ones(10, int), np.full(10, 2)])
        assert tune_neighbors(data, seed=0) <= 14
