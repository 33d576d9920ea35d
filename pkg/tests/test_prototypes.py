"""Assignment prediction, gated reconstruction, partition cost, and the relaxed minimizer."""

import math

import numpy as np
import pytest

from protoset.errors import DomainError, ShapeError
from protoset.oracle import ari
from protoset.prototypes import (
    PrototypeParams,
    affinity,
    distance_evals,
    harden,
    init_prototypes,
    median_bandwidth,
    minimize_partition_cost,
    pairwise_distances,
    pairwise_distances_backward,
    partition_cost,
    partition_cost_backward,
    predict_assignment,
    predict_assignment_backward,
    project_rows_to_simplex,
    reconstruct_backward,
    reconstruct_forward,
    reset_distance_evals,
)


def random_head(seed=0, d=5, k=4, std=0.5):
    rng = np.random.default_rng(seed)
    params = init_prototypes(d, k, rng, std=std)
    params.gate_logits[:] = std * rng.standard_normal(params.gate_logits.shape)
    return params, rng


def block_distances():
    """Four media, blocks {0,1} and {2,3}: zero within, four across."""
    d = np.full((4, 4), 4.0)
    d[np.ix_([0, 1], [0, 1])] = 0.0
    d[np.ix_([2, 3], [2, 3])] = 0.0
    return d


def cost_loop(assign, dists):
    total = 0.0
    n, k = assign.shape
    for i in range(n):
        for j in range(n):
            for c in range(k):
                total += assign[i, c] * dists[i, j] * assign[j, c]
    return total


class TestAssignment:
    def test_zero_predictor_gives_half_raw_and_uniform_norm(self):
        params = PrototypeParams(np.zeros((3, 4)), np.eye(3), np.zeros((4, 3)))
        a = predict_assignment(params, np.random.default_rng(0).standard_normal((6, 3)))
        np.testing.assert_array_equal(a.raw, np.full((6, 4), 0.5))
        np.testing.assert_allclose(a.norm, np.full((6, 4), 0.25), rtol=0, atol=1e-15)

    def test_rows_sum_to_one(self):
        params, rng = random_head(1)
        a = predict_assignment(params, rng.standard_normal((7, 5)))
        np.testing.assert_allclose(a.norm.sum(axis=1), np.ones(7), atol=1e-12)
        assert np.all(a.raw > 0) and np.all(a.raw < 1)

    def test_shape_validation(self):
        params, _ = random_head()
        with pytest.raises(ShapeError):
            predict_assignment(params, np.zeros((3, 6)))

    def test_backward_matches_finite_differences(self):
        params, rng = random_head(2)
        feats = rng.standard_normal((5, 5))
        upstream = rng.standard_normal((5, 4))

        def loss():
            return float((upstream * predict_assignment(params, feats).norm).sum())

        a = predict_assignment(params, feats)
        d_feats, d_pred = predict_assignment_backward(params, feats, a, upstream)
        step = 1e-6
        for arr, grad in ((feats, d_feats), (params.predictor, d_pred)):
            flat, gflat = arr.reshape(-1), grad.reshape(-1)
            for c in rng.choice(flat.size, size=6, replace=False):
                keep = flat[c]
                flat[c] = keep + step
                up = loss()
                flat[c] = keep - step
                down = loss()
                flat[c] = keep
                numeric = (up - down) / (2 * step)
                assert abs(gflat[c] - numeric) / max(abs(gflat[c]), abs(numeric), 1e-4) < 1e-4


class TestReconstruct:
    def test_identity_transform_open_gates_reduce_to_normalization(self):
        d, k = 4, 3
        params = PrototypeParams(np.zeros((d, k)), np.eye(d), np.full((k, d), 40.0))
        rng = np.random.default_rng(3)
        feats = rng.standard_normal((6, d))
        a = predict_assignment(params, feats)
        fhat, _ = reconstruct_forward(params, feats, a.norm)
        expect = feats / np.linalg.norm(feats, axis=1, keepdims=True)
        np.testing.assert_allclose(fhat, expect, atol=1e-9)

    def test_rows_are_unit_norm(self):
        params, rng = random_head(4)
        feats = rng.standard_normal((8, 5))
        a = predict_assignment(params, feats)
        fhat, _ = reconstruct_forward(params, feats, a.norm)
        np.testing.assert_allclose(np.linalg.norm(fhat, axis=1), np.ones(8), atol=1e-9)

    def test_backward_matches_finite_differences(self):
        params, rng = random_head(5)
        feats = rng.standard_normal((6, 5))
        a = predict_assignment(params, feats)
        assign = a.norm.copy()
        upstream = rng.standard_normal((6, 5))

        def loss():
            out, _ = reconstruct_forward(params, feats, assign)
            return float((upstream * out).sum())

        _, cache = reconstruct_forward(params, feats, assign)
        d_feats, d_assign, d_transform, d_gates = reconstruct_backward(params, cache, upstream)
        step = 1e-6
        checks = (
            (feats, d_feats),
            (assign, d_assign),
            (params.transform, d_transform),
            (params.gate_logits, d_gates),
        )
        for arr, grad in checks:
            flat, gflat = arr.reshape(-1), grad.reshape(-1)
            for c in rng.choice(flat.size, size=6, replace=False):
                keep = flat[c]
                flat[c] = keep + step
                up = loss()
                flat[c] = keep - step
                down = loss()
                flat[c] = keep
                numeric = (up - down) / (2 * step)
                assert abs(gflat[c] - numeric) / max(abs(gflat[c]), abs(numeric), 1e-4) < 1e-4


class TestDistances:
    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(6)
        fa, fb = rng.standard_normal((5, 3)), rng.standard_normal((4, 3))
        d = pairwise_distances(fa, fb)
        for i in range(5):
            for j in range(4):
                ref = sum((fa[i, c] - fb[j, c]) ** 2 for c in range(3))
                assert abs(d[i, j] - ref) <= 1e-10

    def test_unit_basis_vectors_are_two_apart(self):
        e1, e2 = np.eye(3)[0:1], np.eye(3)[1:2]
        assert pairwise_distances(e1, e2)[0, 0] == 2.0

    def test_self_distances_symmetric_zero_diagonal(self):
        f = np.random.default_rng(7).standard_normal((6, 4))
        d = pairwise_distances(f, f)
        np.testing.assert_array_equal(d, d.T)
        np.testing.assert_array_equal(np.diag(d), np.zeros(6))
        assert np.all(d >= 0)

    def test_evaluation_counter(self):
        reset_distance_evals()
        pairwise_distances(np.zeros((3, 2)), np.zeros((5, 2)))
        assert distance_evals() == 15
        pairwise_distances(np.zeros((2, 2)), np.zeros((2, 2)))
        assert distance_evals() == 19
        reset_distance_evals()
        assert distance_evals() == 0

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        fa, fb = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
        upstream = rng.standard_normal((4, 5))
        d_fa, d_fb = pairwise_distances_backward(fa, fb, upstream)
        step = 1e-6
        for arr, grad in ((fa, d_fa), (fb, d_fb)):
            flat, gflat = arr.reshape(-1), grad.reshape(-1)
            for c in rng.choice(flat.size, size=5, replace=False):
                keep = flat[c]
                flat[c] = keep + step
                up = float((upstream * pairwise_distances(fa, fb)).sum())
                flat[c] = keep - step
                down = float((upstream * pairwise_distances(fa, fb)).sum())
                flat[c] = keep
                numeric = (up - down) / (2 * step)
                assert abs(gflat[c] - numeric) / max(abs(gflat[c]), abs(numeric), 1e-4) < 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            pairwise_distances(np.zeros((2, 3)), np.zeros((2, 4)))


class TestAffinity:
    def test_bandwidth_point(self):
        d = np.array([[0.0, 2.25], [2.25, 0.0]])
        a = affinity(d, 1.5)
        assert abs(a[0, 1] - math.exp(-1)) < 1e-12
        assert a[0, 0] == 1.0

    def test_bad_bandwidth(self):
        with pytest.raises(DomainError):
            affinity(np.zeros((2, 2)), 0.0)
        with pytest.raises(DomainError):
            affinity(np.zeros((2, 2)), -1.0)

    def test_median_bandwidth(self):
        d = np.array([[0.0, 4.0], [4.0, 0.0]])
        assert median_bandwidth(d) == 2.0
        assert abs(affinity(d, median_bandwidth(d))[0, 1] - math.exp(-1)) < 1e-12


class TestPartitionCost:
    def test_hard_matching_blocks_cost_zero(self):
        d = block_distances()
        z = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=float)
        assert partition_cost(z, d) == 0.0

    def test_uniform_assignment_cost(self):
        d = block_distances()
        z = np.full((4, 2), 0.5)
        assert abs(partition_cost(z, d) - 16.0) < 1e-12
        assert abs(cost_loop(z, d) - 16.0) < 1e-12

    def test_anti_matching_blocks_cost(self):
        d = block_distances()
        z = np.array([[1, 0], [0, 1], [1, 0], [0, 1]], dtype=float)
        assert abs(partition_cost(z, d) - 16.0) < 1e-12

    def test_matches_loop_oracle_on_random_inputs(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            n, k = int(rng.integers(2, 7)), int(rng.integers(1, 5))
            z = rng.uniform(size=(n, k))
            z /= z.sum(axis=1, keepdims=True)
            d = rng.uniform(size=(n, n))
            d = d + d.T
            np.fill_diagonal(d, 0.0)
            assert abs(partition_cost(z, d) - cost_loop(z, d)) < 1e-12

    def test_backward_is_exact(self):
        rng = np.random.default_rng(10)
        z = rng.uniform(size=(5, 3))
        d = rng.uniform(size=(5, 5))
        d = d + d.T
        d_z, d_d = partition_cost_backward(z, d, upstream=2.0)
        np.testing.assert_allclose(d_z, 2.0 * (d + d.T) @ z, atol=1e-12)
        np.testing.assert_allclose(d_d, 2.0 * z @ z.T, atol=1e-12)
        step = 1e-6
        for arr, grad in ((z, d_z), (d, d_d)):
            flat, gflat = arr.reshape(-1), grad.reshape(-1)
            for c in rng.choice(flat.size, size=5, replace=False):
                keep = flat[c]
                flat[c] = keep + step
                up = 2.0 * partition_cost(z, d)
                flat[c] = keep - step
                down = 2.0 * partition_cost(z, d)
                flat[c] = keep
                assert abs(gflat[c] - (up - down) / (2 * step)) < 1e-5

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            partition_cost(np.zeros((3, 2)), np.zeros((4, 4)))


class TestHarden:
    def test_argmax_with_smallest_index_ties(self):
        z = np.array([[0.4, 0.4, 0.2], [0.2, 0.5, 0.3], [1 / 3, 1 / 3, 1 / 3]])
        np.testing.assert_array_equal(harden(z), [0, 1, 0])

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            harden(np.zeros((0, 3)))


class TestSimplexProjection:
    def test_rows_land_on_simplex(self):
        rng = np.random.default_rng(11)
        y = 3.0 * rng.standard_normal((20, 6))
        p = project_rows_to_simplex(y)
        np.testing.assert_allclose(p.sum(axis=1), np.ones(20), atol=1e-12)
        assert np.all(p >= 0)

    def test_idempotent_on_simplex_points(self):
        rng = np.random.default_rng(12)
        z = rng.uniform(size=(10, 4))
        z /= z.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(project_rows_to_simplex(z), z, atol=1e-12)

    def test_projection_is_nearest_simplex_point(self):
        rng = np.random.default_rng(13)
        y = rng.standard_normal((5, 4))
        p = project_rows_to_simplex(y)
        for _ in range(200):
            w = rng.uniform(size=(5, 4))
            w /= w.sum(axis=1, keepdims=True)
            own = ((y - p) ** 2).sum(axis=1)
            other = ((y - w) ** 2).sum(axis=1)
            assert np.all(own <= other + 1e-12)


class TestRelaxedMinimizer:
    def test_recovers_planted_blocks(self):
        rng = np.random.default_rng(14)
        centers = np.array([[0.0, 0.0], [6.0, 6.0]])
        planted = np.repeat([0, 1], 4)
        x = centers[planted] + 0.1 * rng.standard_normal((8, 2))
        d = pairwise_distances(x, x)
        labels, value, z = minimize_partition_cost(d, 2, seed=0)
        assert ari(labels, planted) == 1.0
        onehot = np.zeros((8, 2))
        onehot[np.arange(8), labels] = 1.0
        assert abs(value - partition_cost(onehot, d)) < 1e-12
        np.testing.assert_allclose(z.sum(axis=1), np.ones(8), atol=1e-9)

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(15)
        d = pairwise_distances(rng.standard_normal((7, 3)), rng.standard_normal((7, 3)))
        d = (d + d.T) / 2
        np.fill_diagonal(d, 0.0)
        a = minimize_partition_cost(d, 3, seed=5)
        b = minimize_partition_cost(d, 3, seed=5)
        np.testing.assert_array_equal(a[0], b[0])
        assert a[1] == b[1]

    def test_validation(self):
        with pytest.raises(ShapeError):
            minimize_partition_cost(np.zeros((2, 3)), 2)
        with pytest.raises(DomainError):
            minimize_partition_cost(np.zeros((2, 2)), 0)
