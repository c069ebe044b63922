"""k-means fitting and the size-based cluster-to-class rule."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from callqa.cluster import (KMeansModel, assign_classes_by_size, kmeans_fit, kmeans_plusplus,
                            kmeans_predict, predict_classes)
from callqa.errors import DimensionError, InvalidInputError


def two_blobs(rng, n=(60, 40), sep=10.0):
    a = rng.normal(0, 1, (n[0], 2))
    b = rng.normal(sep, 1, (n[1], 2))
    return np.vstack([a, b]), np.repeat([0, 1], n)


def same_partition(a, b) -> bool:
    """Equal up to renaming the cluster ids."""
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


def best_1d_split(x):
    """Optimal 2-means inertia in one dimension: try every contiguous split."""
    s = np.sort(x)
    best = np.inf
    for i in range(1, s.size):
        lo, hi = s[:i], s[i:]
        best = min(best, ((lo - lo.mean()) ** 2).sum() + ((hi - hi.mean()) ** 2).sum())
    return best


class TestFit:
    @pytest.mark.parametrize("seed", range(100))
    def test_inertia_never_increases(self, seed):
        r = np.random.default_rng(seed)
        n, d, k = int(r.integers(5, 80)), int(r.integers(1, 5)), int(r.integers(2, 5))
        x = r.normal(size=(n, d)) * r.uniform(0.1, 10, d)
        if seed % 3 == 0:  # heavy duplication provokes empty clusters
            x = x[r.integers(0, max(2, n // 8), n)]
        m = kmeans_fit(x, k=min(k, n), seed=seed, n_init=3)
        h = np.array(m.inertia_history)
        assert np.all(np.diff(h) <= 1e-9 * max(1.0, h[0]))
        assert m.inertia == h[-1]

    def test_two_blob_fixture(self, rng):
        x, y = two_blobs(rng)
        m = kmeans_fit(x, 2, seed=0)
        assert same_partition(kmeans_predict(m, x), y)

    @pytest.mark.parametrize("seed", range(10))
    def test_permutation_invariance(self, seed):
        r = np.random.default_rng(seed)
        centers = r.uniform(-20, 20, (3, 2))
        x = np.vstack([r.normal(c, 1.0, (40, 2)) for c in centers])
        perm = r.permutation(x.shape[0])
        a = kmeans_predict(kmeans_fit(x, 3, seed=1), x)
        b = kmeans_predict(kmeans_fit(x[perm], 3, seed=1), x)
        assert same_partition(a, b)

    def test_deterministic(self, rng):
        x = rng.normal(size=(50, 3))
        a, b = kmeans_fit(x, 2, seed=4), kmeans_fit(x, 2, seed=4)
        np.testing.assert_array_equal(a.centroids, b.centroids)

    @given(arrays(float, st.integers(4, 25), elements=st.floats(-100, 100)),
           st.integers(0, 1000))
    def test_never_beats_the_1d_optimum(self, x, seed):
        if np.unique(x).size < 2:
            return
        m = kmeans_fit(x[:, None], 2, seed=seed)
        assert m.inertia >= best_1d_split(x) - 1e-7 * max(1.0, np.abs(x).max() ** 2)

    @pytest.mark.parametrize("seed", range(20))
    def test_finds_the_1d_optimum_on_separated_data(self, seed):
        r = np.random.default_rng(seed)
        x = np.concatenate([r.normal(0, 1, 30), r.normal(r.uniform(8, 20), 1, 20)])
        m = kmeans_fit(x[:, None], 2, seed=seed)
        assert m.inertia == pytest.approx(best_1d_split(x), rel=1e-9)

    @given(arrays(float, (30, 2), elements=st.floats(-50, 50)), st.integers(0, 100))
    def test_result_is_a_lloyd_fixed_point(self, x, seed):
        m = kmeans_fit(x, 2, seed=seed)
        labels = kmeans_predict(m, x)
        for j in range(2):
            if np.any(labels == j):
                np.testing.assert_allclose(m.centroids[j], x[labels == j].mean(axis=0),
                                           atol=1e-4)

    def test_duplicate_points_fill_every_cluster(self):
        x = np.array([[0.0]] * 10 + [[1.0]])
        m = kmeans_fit(x, 2, seed=0)
        assert sorted(np.bincount(kmeans_predict(m, x), minlength=2)) == [1, 10]

    @pytest.mark.parametrize("x,k", [(np.zeros((1, 2)), 2), (np.zeros(5), 2),
                                     (np.array([[np.nan], [1.0]]), 2), (np.zeros((3, 1)), 0)])
    def test_invalid_input(self, x, k):
        with pytest.raises((InvalidInputError, DimensionError)):
            kmeans_fit(x, k)


class TestPlusPlus:
    def test_picks_distinct_points_when_possible(self, rng):
        x = np.array([[0.0], [0.0], [0.0], [5.0]])
        for s in range(20):
            c = kmeans_plusplus(x, 2, np.random.default_rng(s))
            assert sorted(c.ravel()) == [0.0, 5.0]


class TestPredict:
    def test_empty_input(self, rng):
        m = kmeans_fit(rng.normal(size=(10, 2)), 2)
        assert kmeans_predict(m, np.empty((0, 2))).size == 0

    def test_dimension_mismatch(self, rng):
        m = kmeans_fit(rng.normal(size=(10, 2)), 2)
        with pytest.raises(DimensionError):
            kmeans_predict(m, np.zeros((3, 3)))

    def test_tie_goes_to_lowest_id(self):
        m = KMeansModel(2, np.array([[-1.0], [1.0]]), 0.0)
        assert kmeans_predict(m, np.array([[0.0]]))[0] == 0

    def test_round_trip(self, rng):
        x, _ = two_blobs(rng)
        m = kmeans_fit(x, 2)
        m = assign_classes_by_size(m, kmeans_predict(m, x))
        m2 = KMeansModel.from_json(m.to_json())
        np.testing.assert_array_equal(predict_classes(m2, x), predict_classes(m, x))


class TestClassAssignment:
    def model(self):
        return KMeansModel(2, np.array([[0.0], [1.0]]), 0.0)

    def test_larger_cluster_is_class_zero(self):
        m = assign_classes_by_size(self.model(), [1, 1, 1, 0])
        assert m.cluster_to_class == {1: 0, 0: 1}

    def test_tie(self):
        assert assign_classes_by_size(self.model(), [0, 1]).cluster_to_class == {0: 0, 1: 1}

    def test_empty_cluster(self):
        assert assign_classes_by_size(self.model(), [1, 1]).cluster_to_class == {1: 0, 0: 1}

    def test_minority_blob_is_flagged(self, rng):
        x, y = two_blobs(rng, n=(90, 10))
        m = kmeans_fit(x, 2)
        m = assign_classes_by_size(m, kmeans_predict(m, x))
        np.testing.assert_array_equal(predict_classes(m, x), y)

    def test_needs_mapping(self):
        with pytest.raises(InvalidInputError):
            predict_classes(self.model(), [[0.0]])

    def test_needs_k2(self):
        with pytest.raises(InvalidInputError):
            assign_classes_by_size(KMeansModel(3, np.zeros((3, 1)), 0.0), [0, 1, 2])
