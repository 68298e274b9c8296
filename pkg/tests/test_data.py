import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import stats

from gcshift.data import (
    DataError,
    Dataset,
    ScalingSpec,
    apply_scaling,
    check_simplex,
    class_proportions,
    fit_scaling,
    load_csv,
    split,
)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadCsv:
    def test_labeled(self, tmp_path):
        p = _write(tmp_path, "x1,x2,y\n0.1,0.2,1\n0.3,0.4,2\n0.5,0.6,1\n")
        d = load_csv(p, label_column="y")
        assert (d.n, d.d, d.k) == (3, 2, 2)
        np.testing.assert_array_equal(d.labels, [1, 2, 1])
        assert d.columns == ("x1", "x2")

    def test_unlabeled(self, tmp_path):
        p = _write(tmp_path, "x1,x2,y\n0.1,0.2,1\n0.3,0.4,2\n0.5,0.6,1\n")
        d = load_csv(p)
        assert d.labels is None
        assert d.d == 3

    def test_label_zero_rejected(self, tmp_path):
        p = _write(tmp_path, "x1,y\n0.1,0\n0.2,1\n")
        with pytest.raises(DataError, match="label out of range"):
            load_csv(p, label_column="y")

    def test_label_above_k_rejected(self, tmp_path):
        p = _write(tmp_path, "x1,y\n0.1,3\n0.2,1\n")
        with pytest.raises(DataError, match="label out of range"):
            load_csv(p, label_column="y", k=2)

    def test_k_override(self, tmp_path):
        p = _write(tmp_path, "x1,y\n0.1,1\n0.2,1\n")
        assert load_csv(p, label_column="y", k=3).k == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="no such file"):
            load_csv(tmp_path / "nope.csv")

    def test_empty_file(self, tmp_path):
        with pytest.raises(DataError, match="empty"):
            load_csv(_write(tmp_path, ""))

    def test_non_numeric(self, tmp_path):
        p = _write(tmp_path, "x1,y\nabc,1\n")
        with pytest.raises(DataError, match="non-numeric"):
            load_csv(p, label_column="y")

    def test_feature_subset(self, tmp_path):
        p = _write(tmp_path, "a,b,c\n1,2,3\n4,5,6\n")
        d = load_csv(p, feature_columns=["c", "a"])
        np.testing.assert_array_equal(d.features, [[3, 1], [6, 4]])


class TestDataset:
    def test_immutable(self):
        d = Dataset(np.zeros((2, 2)), np.array([1, 2]))
        with pytest.raises(ValueError):
            d.features[0, 0] = 1.0

    @pytest.mark.parametrize("labels", [[0, 1], [1, 3]])
    def test_label_range(self, labels):
        with pytest.raises(DataError):
            Dataset(np.zeros((2, 1)), np.array(labels), k=2)

    def test_k_at_least_two(self):
        with pytest.raises(DataError):
            Dataset(np.zeros((2, 1)), k=1)


class TestScaling:
    def test_affine(self):
        d = Dataset(np.array([[2.0], [4.0], [6.0]]))
        out = apply_scaling(d, fit_scaling(d))
        np.testing.assert_array_equal(out.features[:, 0], [0.0, 0.5, 1.0])

    def test_constant_column(self):
        d = Dataset(np.array([[3.0], [3.0], [3.0]]))
        out = apply_scaling(d, fit_scaling(d))
        np.testing.assert_array_equal(out.features[:, 0], [0.5, 0.5, 0.5])

    def test_clamp(self):
        spec = ScalingSpec(np.array([2.0]), np.array([6.0]))
        assert spec.transform(np.array([[8.0]]))[0, 0] == 1.0
        assert spec.transform(np.array([[-1.0]]))[0, 0] == 0.0

    def test_dimension_mismatch(self):
        spec = ScalingSpec(np.zeros(2), np.ones(2))
        with pytest.raises(DataError, match="dimension mismatch"):
            apply_scaling(Dataset(np.zeros((2, 3))), spec)

    def test_json_roundtrip(self):
        spec = ScalingSpec(np.array([0.0, -1.5]), np.array([2.0, 3.25]))
        doc = json.loads(spec.to_json())
        assert set(doc) == {"mins", "maxs"}
        back = ScalingSpec.from_dict(doc)
        np.testing.assert_array_equal(back.mins, spec.mins)
        np.testing.assert_array_equal(back.maxs, spec.maxs)

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(float, st.tuples(st.integers(1, 20), st.integers(1, 4)),
                      elements=st.floats(-1e3, 1e3)))
    def test_idempotent_on_training_set(self, x):
        d = Dataset(x)
        once = apply_scaling(d, fit_scaling(d))
        twice = apply_scaling(once, fit_scaling(d))
        assert np.all((once.features >= 0) & (once.features <= 1))
        # re-scaling the scaled training set with its own spec changes nothing
        again = apply_scaling(once, fit_scaling(once))
        np.testing.assert_allclose(again.features, once.features, atol=1e-12)
        assert twice.features.shape == once.features.shape


class TestClassProportions:
    def test_counting(self):
        d = Dataset(np.zeros((4, 1)), np.array([1, 1, 1, 2]))
        np.testing.assert_array_equal(class_proportions(d), [0.75, 0.25])

    def test_boundary(self):
        d = Dataset(np.zeros((3, 1)), np.array([1, 1, 1]))
        np.testing.assert_array_equal(class_proportions(d), [1.0, 0.0])

    def test_needs_labels(self):
        with pytest.raises(DataError):
            class_proportions(Dataset(np.zeros((3, 1))))

    def test_binomial_concentration(self, rng):
        # P(|p_hat - 0.75| > 0.05) for n = 1000 from the exact binomial law
        n = 1000
        tail = stats.binom.cdf(699, n, 0.75) + stats.binom.sf(800, n, 0.75)
        assert tail < 0.01
        y = np.where(rng.random(n) < 0.75, 1, 2)
        p = class_proportions(Dataset(np.zeros((n, 1)), y))
        assert abs(p[0] - 0.75) <= 0.05

    @given(st.lists(st.integers(1, 4), min_size=1, max_size=50))
    def test_always_simplex(self, labels):
        d = Dataset(np.zeros((len(labels), 1)), np.array(labels), k=4)
        check_simplex(class_proportions(d))


class TestSplit:
    def test_sizes(self):
        a, b = split(Dataset(np.arange(10.0)[:, None]), 0.7, seed=1)
        assert (a.n, b.n) == (7, 3)

    def test_real_data_protocol(self):
        a, b = split(Dataset(np.arange(620.0)[:, None]), 0.5, seed=1)
        assert (a.n, b.n) == (310, 310)

    def test_deterministic_and_disjoint(self):
        d = Dataset(np.arange(50.0)[:, None], np.ones(50, dtype=int))
        a1, b1 = split(d, 0.6, seed=3)
        a2, b2 = split(d, 0.6, seed=3)
        np.testing.assert_array_equal(a1.features, a2.features)
        np.testing.assert_array_equal(b1.features, b2.features)
        union = np.sort(np.concatenate([a1.features[:, 0], b1.features[:, 0]]))
        np.testing.assert_array_equal(union, d.features[:, 0])

    def test_seeds_differ(self):
        d = Dataset(np.arange(20.0)[:, None])
        a1, _ = split(d, 0.5, seed=1)
        a2, _ = split(d, 0.5, seed=2)
        assert not np.array_equal(a1.features, a2.features)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1, 1.5])
    def test_bad_fraction(self, fraction):
        with pytest.raises(ValueError):
            split(Dataset(np.arange(10.0)[:, None]), fraction, seed=0)
