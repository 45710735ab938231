import numpy as np
import pytest

from segprobe import FeatureMap, cluster_map, kmeans
from segprobe.cluster import nearest_index_map, render_index_map
from segprobe.errors import InvalidArgumentError


def partitions_equal(a, b):
    """True when two labelings induce the same partition (up to renaming)."""
    mapping = {}
    for x, y in zip(a.tolist(), b.tolist()):
        if x in mapping and mapping[x] != y:
            return False
        mapping[x] = y
    return len(set(mapping.values())) == len(mapping)


class TestKmeans:
    def test_k_equals_n_distinct_points(self):
        rng = np.random.default_rng(0)
        tokens = rng.normal(size=(6, 3))
        result = kmeans(tokens, k=6, seed=1)
        assert result.inertia == pytest.approx(0.0, abs=1e-12)
        assert len(set(result.assignments.tolist())) == 6

    def test_k1_centroid_is_mean(self):
        rng = np.random.default_rng(1)
        tokens = rng.normal(size=(40, 5))
        result = kmeans(tokens, k=1, seed=0)
        np.testing.assert_allclose(result.centroids[0], tokens.mean(axis=0), atol=1e-12)
        assert np.all(result.assignments == 0)

    def test_two_separated_clouds_recovered(self):
        rng = np.random.default_rng(2)
        sigma = 0.5
        a = rng.normal(size=(60, 4), scale=sigma)
        b = rng.normal(size=(40, 4), scale=sigma) + 100 * sigma
        tokens = np.concatenate([a, b])
        truth = np.array([0] * 60 + [1] * 40)
        result = kmeans(tokens, k=2, seed=3)
        assert partitions_equal(result.assignments, truth)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        tokens = rng.normal(size=(50, 6))
        a = kmeans(tokens, k=4, seed=7)
        b = kmeans(tokens, k=4, seed=7)
        assert np.array_equal(a.assignments, b.assignments)
        assert a.inertia == b.inertia

    def test_centroids_are_cluster_means(self):
        rng = np.random.default_rng(4)
        tokens = rng.normal(size=(80, 3))
        result = kmeans(tokens, k=5, seed=0)
        for j in range(5):
            members = tokens[result.assignments == j]
            assert members.size
            np.testing.assert_allclose(result.centroids[j], members.mean(axis=0), atol=1e-5)

    def test_translation_invariance(self):
        # integer tokens: squared distances stay exactly representable, so
        # the shifted run consumes the RNG identically
        rng = np.random.default_rng(5)
        tokens = rng.integers(-10, 10, size=(60, 4)).astype(np.float64)
        shifted = tokens + np.array([1000.0, -500.0, 250.0, 0.0])
        a = kmeans(tokens, k=3, seed=11)
        b = kmeans(shifted, k=3, seed=11)
        assert np.array_equal(a.assignments, b.assignments)

    def test_inertia_reported_consistent_with_assignments(self):
        rng = np.random.default_rng(6)
        tokens = rng.normal(size=(30, 2))
        result = kmeans(tokens, k=3, seed=2)
        direct = ((tokens - result.centroids[result.assignments]) ** 2).sum()
        assert result.inertia == pytest.approx(direct, rel=1e-12)

    def test_invalid_k(self):
        tokens = np.zeros((5, 2))
        with pytest.raises(InvalidArgumentError):
            kmeans(tokens, k=0, seed=0)
        with pytest.raises(InvalidArgumentError):
            kmeans(tokens, k=6, seed=0)

    def test_duplicate_points_with_large_k(self):
        # more clusters than distinct values: empty-cluster reseeding must
        # still converge with zero inertia
        tokens = np.repeat(np.array([[0.0, 0.0], [5.0, 5.0]]), 5, axis=0)
        result = kmeans(tokens, k=4, seed=1)
        assert result.inertia == pytest.approx(0.0, abs=1e-12)


class TestClusterMap:
    def _features(self, grid, dim=6, patch=4, seed=0):
        rng = np.random.default_rng(seed)
        values = rng.normal(size=(*grid, dim)).astype(np.float32)
        return FeatureMap("img", values, grid[0] * patch, grid[1] * patch)

    def test_constant_features_zero_inertia(self):
        features = FeatureMap("img", np.ones((4, 4, 3), dtype=np.float32), 16, 16)
        result, index_map = cluster_map(features, k=3, seed=0)
        assert result.inertia == pytest.approx(0.0, abs=1e-12)
        assert index_map.shape == (16, 16)

    def test_two_region_features_recover_boundary(self):
        grid = np.zeros((8, 8), dtype=int)
        grid[:, 4:] = 1
        tokens = np.eye(2, 5, dtype=np.float32)[grid]
        tokens += np.random.default_rng(1).normal(scale=0.05, size=tokens.shape).astype(np.float32)
        features = FeatureMap("img", tokens, 32, 32)
        result, _ = cluster_map(features, k=2, seed=2)
        assert partitions_equal(result.assignments.ravel(), grid.ravel())

    def test_assignments_shaped_to_grid(self):
        features = self._features((5, 7))
        result, index_map = cluster_map(features, k=4, seed=3)
        assert result.assignments.shape == (5, 7)
        assert index_map.shape == (20, 28)
        assert index_map.dtype == np.uint8

    def test_deterministic(self):
        features = self._features((6, 6), seed=9)
        a, map_a = cluster_map(features, k=3, seed=5)
        b, map_b = cluster_map(features, k=3, seed=5)
        assert np.array_equal(a.assignments, b.assignments)
        assert map_a.tobytes() == map_b.tobytes()

    def test_l2_normalize_changes_geometry_not_shape(self):
        features = self._features((4, 4))
        result, index_map = cluster_map(features, k=2, seed=0, l2_normalize=True)
        assert result.assignments.shape == (4, 4)
        assert index_map.shape == (16, 16)


class TestNearestUpsample:
    def test_nearest_index_map_endpoints(self):
        idx = nearest_index_map(4, 8)
        assert idx[0] == 0
        assert idx[-1] == 3
        assert np.all(np.diff(idx) >= 0)

    def test_singleton_dimensions(self):
        assert np.all(nearest_index_map(1, 5) == 0)
        assert np.all(nearest_index_map(5, 1) == 0)

    def test_render_blocks_are_categorical(self):
        grid = np.array([[0, 1], [2, 3]])
        out = render_index_map(grid, 8, 8)
        assert set(np.unique(out).tolist()) == {0, 1, 2, 3}
        assert out[0, 0] == 0 and out[-1, -1] == 3
