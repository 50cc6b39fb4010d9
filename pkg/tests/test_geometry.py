import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from danet import ops
from danet.geometry import (GAUSS_NORM, NeighborhoodIndex, PointCloud, batch_fps, batch_kde,
                            farthest_point_sample, group_features, interpolate_features,
                            interpolation_weights, kde_density, knn_query, knn_search,
                            mean_nn_distance)
from danet.gradcheck import gradient_check
from danet.tensor import Tensor, backward


# -- independent oracles --------------------------------------------------------------

def _key(pos, i):
    return (pos[i, 0], pos[i, 1], pos[i, 2], i)


def fps_oracle(pos, n):
    """Textbook O(N^2) FPS with the canonical start and tie rule."""
    N = len(pos)
    first = min(range(N), key=lambda i: _key(pos, i))
    chosen = [first]
    while len(chosen) < n:
        best, best_d = None, -1.0
        for i in sorted(range(N), key=lambda i: _key(pos, i)):
            if i in chosen:
                continue
            d = min(float(np.sum((pos[i] - pos[j]) ** 2)) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def knn_oracle(pos, q, k):
    d2 = [((pos[i] - q) ** 2).sum() for i in range(len(pos))]
    order = sorted(range(len(pos)), key=lambda i: (d2[i],) + _key(pos, i))
    return order[:k], [math.sqrt(d2[i]) for i in order[:k]]


def kde_oracle(pos, nbr, sigma):
    out = []
    for c, row in zip(nbr.centers, nbr.neighbors):
        acc = 0.0
        for j in row:
            u2 = sum((pos[j, a] - pos[c, a]) ** 2 for a in range(3)) / sigma ** 2
            acc += (2 * math.pi) ** -1.5 * math.exp(-u2 / 2)
        out.append(acc / (len(row) * sigma))
    return np.array(out)


def cloud(seed, n):
    return np.random.default_rng(seed).uniform(-1, 1, (n, 3))


class TestPointCloud:
    def test_validation(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((0, 3)))
        with pytest.raises(ValueError):
            PointCloud(np.zeros((4, 2)))
        with pytest.raises(ValueError):
            PointCloud(np.array([[0.0, np.inf, 0.0]]))
        with pytest.raises(ValueError):
            PointCloud(np.zeros((4, 3)), labels=np.zeros(3))

    def test_subset_keeps_attributes(self):
        pc = PointCloud(cloud(0, 5), np.arange(10.0).reshape(5, 2), np.arange(5))
        sub = pc.subset([4, 1])
        np.testing.assert_array_equal(sub.labels, [4, 1])
        np.testing.assert_array_equal(sub.attributes, [[8, 9], [2, 3]])


class TestFPS:
    def test_collinear_endpoints(self):
        pos = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], float)
        assert sorted(farthest_point_sample(pos, 2)) == [0, 3]

    def test_start_is_lexicographic_min(self):
        pos = np.array([[1, 0, 0], [0, 5, 0], [0, 5, -1], [2, 2, 2]], float)
        assert farthest_point_sample(pos, 1)[0] == 2

    def test_exhaustion_returns_all(self):
        pos = cloud(1, 17)
        assert sorted(farthest_point_sample(pos, 17)) == list(range(17))

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_bruteforce_oracle(self, seed):
        pos = cloud(seed, 100)
        assert list(farthest_point_sample(pos, 10)) == fps_oracle(pos, 10)

    def test_ties_on_grid_match_oracle(self):
        g = np.stack(np.meshgrid(*[np.arange(3.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
        assert list(farthest_point_sample(g, 12)) == fps_oracle(g, 12)

    def test_min_distance_nonincreasing(self):
        pos = cloud(7, 300)
        idx = farthest_point_sample(pos, 40)
        gaps = [min(np.linalg.norm(pos[idx[t]] - pos[idx[s]]) for s in range(t))
                for t in range(1, len(idx))]
        assert all(a >= b - 1e-15 for a, b in zip(gaps, gaps[1:]))

    def test_too_many_samples(self):
        with pytest.raises(ValueError):
            farthest_point_sample(cloud(0, 4), 5)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 40))
    def test_permutation_invariant(self, seed, n):
        pos = np.round(cloud(seed, n), 1)  # rounding creates ties
        perm = np.random.default_rng(seed).permutation(n)
        a = farthest_point_sample(pos, min(n, 8))
        b = farthest_point_sample(pos[perm], min(n, 8))
        np.testing.assert_array_equal(pos[a], pos[perm][b])

    def test_batched_matches_single(self):
        pos = np.stack([cloud(s, 50) for s in range(3)])
        out = batch_fps(pos, 9)
        for b in range(3):
            np.testing.assert_array_equal(out[b], farthest_point_sample(pos[b], 9))


class TestKNN:
    def test_line_example(self):
        pos = np.array([[1, 0, 0], [2, 0, 0], [3, 0, 0]], float)
        idx, dist = knn_query(pos, np.zeros((1, 3)), 2)
        np.testing.assert_array_equal(idx, [[0, 1]])
        np.testing.assert_allclose(dist, [[1.0, 2.0]])

    def test_self_is_nearest(self):
        pos = cloud(0, 30)
        nbr = knn_search(PointCloud(pos), [4, 9], 1)
        np.testing.assert_array_equal(nbr.neighbors[:, 0], [4, 9])
        np.testing.assert_array_equal(nbr.distances, 0.0)

    @pytest.mark.parametrize("method", ["brute", "kdtree"])
    def test_matches_exhaustive_oracle(self, method):
        pos = cloud(3, 200)
        nbr = knn_search(pos, np.arange(0, 200, 7), 16, method=method)
        for c, row, dist in zip(nbr.centers, nbr.neighbors, nbr.distances):
            want, wd = knn_oracle(pos, pos[c], 16)
            assert list(row) == want
            np.testing.assert_allclose(dist, wd, rtol=1e-12)

    def test_kdtree_equals_brute_with_ties(self):
        g = np.stack(np.meshgrid(*[np.arange(6.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
        for k in (1, 6, 7, 27):
            a = knn_query(g, g + 0.5, k, method="brute")
            b = knn_query(g, g + 0.5, k, method="kdtree")
            np.testing.assert_array_equal(a[0], b[0])
            np.testing.assert_array_equal(a[1], b[1])

    def test_large_cloud_auto_uses_tree_and_agrees(self):
        pos = cloud(5, 3000)
        q = cloud(6, 50)
        np.testing.assert_array_equal(knn_query(pos, q, 8)[0], knn_query(pos, q, 8, "brute")[0])

    def test_padding_repeats_nearest(self):
        pos = np.array([[0, 0, 0], [1, 0, 0], [5, 0, 0]], float)
        idx, dist = knn_query(pos, np.array([[0.9, 0, 0]]), 5)
        np.testing.assert_array_equal(idx, [[1, 0, 2, 1, 1]])
        np.testing.assert_allclose(dist[0, 3:], dist[0, 0])

    def test_distances_sorted(self):
        _, dist = knn_query(cloud(2, 80), cloud(3, 20), 12)
        assert (np.diff(dist, axis=1) >= 0).all()

    def test_errors(self):
        with pytest.raises(ValueError):
            knn_query(cloud(0, 5), cloud(1, 1), 0)
        with pytest.raises(ValueError):
            knn_search(np.zeros((0, 3)), [], 2)

    def test_permutation_relabels(self):
        pos = np.round(cloud(9, 60), 1)
        perm = np.random.default_rng(1).permutation(60)
        a, _ = knn_query(pos, pos[:5], 10)
        b, _ = knn_query(pos[perm], pos[:5], 10)
        np.testing.assert_array_equal(pos[a], pos[perm][b])


class TestKDE:
    def test_coincident_single_neighbour(self):
        pos = np.zeros((1, 3))
        nbr = NeighborhoodIndex(np.array([0]), np.array([[0]]), np.zeros((1, 1)))
        assert kde_density(pos, nbr, 1.0).values[0] == pytest.approx(0.063494, abs=1e-6)
        assert GAUSS_NORM == pytest.approx((2 * math.pi) ** -1.5)

    def test_value_independent_of_k_when_coincident(self):
        pos = np.zeros((6, 3))
        for k in (1, 3, 6):
            nbr = knn_search(pos, [0], k)
            assert kde_density(pos, nbr, 1.0).values[0] == pytest.approx(GAUSS_NORM, rel=1e-15)

    def test_matches_literal_loop(self):
        pos = cloud(11, 60)
        nbr = knn_search(pos, np.arange(60), 8)
        got = kde_density(pos, nbr, 0.2).values
        np.testing.assert_allclose(got, kde_oracle(pos, nbr, 0.2), rtol=1e-12)
        assert (got > 0).all()

    def test_scaling_law(self):
        pos = cloud(12, 40)
        nbr = knn_search(pos, np.arange(40), 8)
        d1 = kde_density(pos, nbr, 0.3).values
        d2 = kde_density(pos * 2.5, nbr, 0.75).values
        np.testing.assert_allclose(d2, d1 / 2.5, rtol=1e-12)

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_bad_sigma(self, sigma):
        pos = cloud(0, 5)
        with pytest.raises(ValueError):
            kde_density(pos, knn_search(pos, [0], 2), sigma)

    def test_per_cloud_bandwidths(self):
        pos = np.stack([cloud(1, 20), cloud(2, 20)])
        idx = np.stack([knn_query(p, p, 4)[0] for p in pos])
        centers = np.broadcast_to(np.arange(20), (2, 20)).copy()
        both = batch_kde(pos, idx, centers, np.array([0.1, 0.4]))
        np.testing.assert_allclose(both[1], batch_kde(pos[1], idx[1], centers[1], 0.4))

    def test_mean_nn_distance(self):
        pos = np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]], float)
        assert mean_nn_distance(pos) == pytest.approx((1 + 1 + 2) / 3)


class TestGrouping:
    def test_identity_neighbourhood(self):
        f = Tensor(np.random.default_rng(0).normal(size=(5, 4)))
        out = group_features(f, np.arange(5)[:, None])
        np.testing.assert_array_equal(out.data.reshape(5, 4), f.data)

    def test_matches_copy_loop_and_gradient(self):
        rng = np.random.default_rng(1)
        f = Tensor(rng.normal(size=(10, 3)), requires_grad=True)
        idx = rng.integers(0, 10, (4, 6))
        out = group_features(f, NeighborhoodIndex(np.arange(4), idx, np.zeros((4, 6))))
        for i in range(4):
            for j in range(6):
                np.testing.assert_array_equal(out.data[i, j], f.data[idx[i, j]])
        w = Tensor(rng.normal(size=out.shape))
        assert gradient_check(lambda: ops.sum(ops.mul(group_features(f, idx), w)), [f]) < 1e-6

    def test_duplicate_index_accumulates(self):
        f = Tensor(np.ones((3, 2)), requires_grad=True)
        backward(ops.sum(group_features(f, np.array([[2, 2, 2]]))))
        np.testing.assert_array_equal(f.grad, [[0, 0], [0, 0], [3, 3]])

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            group_features(Tensor(np.ones((3, 2))), np.array([[3]]))


class TestInterpolation:
    def test_coincident_point_copies_feature(self):
        coarse = cloud(0, 8)
        feats = Tensor(np.random.default_rng(0).normal(size=(8, 5)))
        out = interpolate_features(coarse, feats, coarse[[3]])
        np.testing.assert_allclose(out.data[0], feats.data[3], rtol=1e-6)

    def test_equidistant_gives_mean(self):
        coarse = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [9, 9, 9]], float)
        feats = Tensor(np.array([[1.0], [2.0], [6.0], [100.0]]))
        out = interpolate_features(coarse, feats, np.zeros((1, 3)))
        assert out.data[0, 0] == pytest.approx(3.0, rel=1e-12)

    def test_matches_naive_3nn(self):
        rng = np.random.default_rng(4)
        coarse, fine = cloud(1, 20), cloud(2, 35)
        feats = rng.normal(size=(20, 4))
        out = interpolate_features(coarse, Tensor(feats), fine).data
        for i, p in enumerate(fine):
            d = np.linalg.norm(coarse - p, axis=1)
            near = np.argsort(d, kind="stable")[:3]
            w = 1 / (d[near] + 1e-8)
            np.testing.assert_allclose(out[i], (w[:, None] * feats[near]).sum(0) / w.sum(), rtol=1e-12)

    def test_weights_are_a_partition_of_unity(self):
        _, w = interpolation_weights(cloud(3, 30), cloud(4, 100))
        assert (w >= 0).all()
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        feats = Tensor(rng.normal(size=(6, 2)), requires_grad=True)
        coarse, fine = cloud(5, 6), cloud(6, 9)
        r = Tensor(rng.normal(size=(9, 2)))
        graph = lambda: ops.sum(ops.mul(interpolate_features(coarse, feats, fine), r))
        assert gradient_check(graph, [feats]) < 1e-6
