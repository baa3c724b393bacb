import warnings
from pathlib import Path

import numpy as np
import pytest

from robust_ope.core import (
    BanditDataset,
    FeatureMap,
    LoggedSample,
    Standardizer,
    constant_policy,
    load_classification_csv,
    standardize,
)

DATA = Path(__file__).resolve().parents[1] / "data"


def _ds(X, k=2):
    n = len(X)
    return BanditDataset(np.asarray(X, float), np.zeros(n, int), np.zeros(n), k)


class TestLoadCsv:
    def test_glass_shape(self):
        X, y, k = load_classification_csv(DATA / "glass.csv")
        assert (X.shape, k) == ((214, 9), 6)
        assert set(y) == set(range(6))

    def test_ecoli_shape(self):
        X, y, k = load_classification_csv(DATA / "ecoli.csv")
        assert (X.shape, k) == ((336, 7), 8)

    def test_dense_reindex(self, tmp_path):
        p = tmp_path / "two.csv"
        p.write_text("f,label\n1.0,A\n2.0,B\n")
        X, y, k = load_classification_csv(p)
        assert k == 2 and y.tolist() == [0, 1]
        assert X.tolist() == [[1.0], [2.0]]

    def test_label_column_anywhere(self, tmp_path):
        p = tmp_path / "mid.csv"
        p.write_text("a,cls,b\n1,z,2\n3,y,4\n")
        X, y, k = load_classification_csv(p, label_column="cls")
        assert X.tolist() == [[1, 2], [3, 4]] and y.tolist() == [1, 0]

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_classification_csv(tmp_path / "nope.csv")

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("f,label\nx,A\n1,B\n")
        with pytest.raises(ValueError, match="non-numeric"):
            load_classification_csv(p)

    def test_single_class(self, tmp_path):
        p = tmp_path / "one.csv"
        p.write_text("f,label\n1,A\n2,A\n")
        with pytest.raises(ValueError, match="2 classes"):
            load_classification_csv(p)

    def test_missing_label_column(self, tmp_path):
        p = tmp_path / "nolab.csv"
        p.write_text("f,g\n1,2\n")
        with pytest.raises(ValueError):
            load_classification_csv(p)


class TestStandardize:
    def test_two_point(self):
        out = standardize(_ds([[1.0], [3.0]]))
        assert out.contexts.ravel().tolist() == [-1.0, 1.0]
        assert out.standardization.mean.tolist() == [2.0]
        assert out.standardization.scale.tolist() == [1.0]

    def test_constant_column_clamped(self):
        with pytest.warns(RuntimeWarning, match="zero-variance"):
            out = standardize(_ds([[5.0], [5.0]]))
        assert out.contexts.ravel().tolist() == [0.0, 0.0]
        assert out.standardization.scale.tolist() == [1.0]

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        once = standardize(_ds(rng.normal(3, 2, (50, 3))))
        twice = standardize(once)
        np.testing.assert_allclose(twice.contexts, once.contexts, atol=1e-12)

    def test_round_trip_bitwise(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(40, 4))
        out = standardize(_ds(X))
        assert np.array_equal(out.standardization.transform(X), out.contexts)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            Standardizer.fit(np.ones((1, 2)))


class TestFeatureMap:
    def test_concat_examples(self):
        fm = FeatureMap(1, 2, "concat")
        assert fm(np.array([0.5]), 1).tolist() == [0.5, 0, 1, 1]
        assert fm(np.array([0.5]), 0).tolist() == [0.5, 1, 0, 1]

    def test_interaction_example(self):
        fm = FeatureMap(1, 2, "interaction")
        assert fm(np.array([2.0]), 0).tolist() == [2, 1, 0, 0]
        assert fm(np.array([2.0]), 1).tolist() == [0, 0, 2, 1]

    @pytest.mark.parametrize("mode,dim", [("concat", 3 + 4 + 1), ("interaction", 4 * 4)])
    def test_output_dim(self, mode, dim):
        fm = FeatureMap(3, 4, mode)
        assert fm.output_dim == dim
        assert fm(np.zeros(3), 2).shape == (dim,)

    def test_action_out_of_range(self):
        with pytest.raises(ValueError):
            FeatureMap(1, 2)(np.zeros(1), 2)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            FeatureMap(1, 2, "cubic")

    def test_all_actions_matches_single(self):
        fm = FeatureMap(2, 3, "interaction")
        X = np.array([[1.0, 2.0], [3.0, -1.0]])
        T = fm.all_actions(X)
        for i in range(2):
            for a in range(3):
                assert np.array_equal(T[i, a], fm(X[i], a))


class TestDataset:
    def test_rejects_bad_action(self):
        with pytest.raises(ValueError):
            BanditDataset(np.zeros((2, 1)), np.array([0, 2]), np.zeros(2), 2)

    def test_rejects_nonpositive_propensity(self):
        with pytest.raises(ValueError):
            BanditDataset(np.zeros((1, 1)), np.array([0]), np.zeros(1), 2, propensities=np.array([0.0]))

    def test_sample_round_trip(self):
        samples = [LoggedSample(np.array([1.0, 2.0]), 1, 0.5, 0.25), LoggedSample(np.array([0.0, 1.0]), 0, 1.0, 0.5)]
        ds = BanditDataset.from_samples(samples, k=2)
        back = list(ds.samples)
        assert [s.action for s in back] == [1, 0]
        assert ds.propensities.tolist() == [0.25, 0.5]

    def test_logged_sample_validation(self):
        with pytest.raises(ValueError):
            LoggedSample(np.zeros(1), 0, float("nan"))
        with pytest.raises(ValueError):
            LoggedSample(np.zeros(1), 0, 1.0, 0.0)

    def test_subset(self):
        ds = BanditDataset(np.arange(6.0).reshape(3, 2), np.array([0, 1, 0]), np.array([1.0, 0.0, 1.0]), 2)
        sub = ds.subset(np.array([2, 0]))
        assert sub.contexts.tolist() == [[4, 5], [0, 1]] and sub.n == 2


def test_constant_policy_sampling_frequencies():
    pol = constant_policy(np.array([0.2, 0.5, 0.3]))
    A = pol.sample(np.zeros((20000, 1)), np.random.default_rng(0))
    freq = np.bincount(A, minlength=3) / len(A)
    np.testing.assert_allclose(freq, [0.2, 0.5, 0.3], atol=0.015)
    assert pol.name == "constant"
