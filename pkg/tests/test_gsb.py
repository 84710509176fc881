import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from holoquant.gsb import (
    Codebook,
    CompressedLayer,
    VQConfig,
    assign_indices,
    compress_layer,
    compress_network,
    kmeans_codebook,
    network_r_squared,
    normalize_grid,
    normalize_grids,
    r_squared,
    reconstruct_grid,
    reconstruct_layer,
    reconstruct_network,
)
from holoquant.kan import KanLayer, ShapeError, SplineGrid, network_forward


def layer_from_shapes(rng, protos, n_in, n_out):
    """Layer whose every grid is gain * prototype + bias for a random prototype."""
    G = protos.shape[1]
    pick = rng.integers(0, len(protos), size=n_in * n_out)
    gains = rng.uniform(0.2, 2.0, size=n_in * n_out)
    biases = rng.normal(size=n_in * n_out)
    c = gains[:, None] * protos[pick] + biases[:, None]
    return KanLayer(c.reshape(n_in, n_out, G)), pick


class TestNormalize:
    def test_two_point(self):
        rec = normalize_grid(SplineGrid(np.array([1.0, 3.0])))
        assert (rec.bias, rec.gain) == (2.0, 1.0)
        np.testing.assert_array_equal(rec.shape, [-1.0, 1.0])

    def test_constant(self):
        rec = normalize_grid(SplineGrid(np.array([5.0, 5.0, 5.0])))
        assert rec.gain == 0.0 and rec.bias == 5.0
        np.testing.assert_array_equal(rec.shape, [0.0, 0.0, 0.0])

    def test_population_std(self):
        rec = normalize_grid(SplineGrid(np.array([0.0, 2.0, 4.0])))
        assert rec.bias == 2.0
        assert rec.gain == pytest.approx(math.sqrt(8 / 3), rel=1e-12)
        np.testing.assert_allclose(rec.shape, [-1.224744871391589, 0.0, 1.224744871391589], rtol=1e-12)

    @given(st.integers(0, 2**32 - 1), st.integers(2, 32))
    def test_shape_moments_and_round_trip(self, seed, G):
        rng = np.random.default_rng(seed)
        c = rng.normal(size=(20, G)) * rng.uniform(0.01, 10, size=(20, 1)) + rng.normal(size=(20, 1))
        s, g, b = normalize_grids(c)
        np.testing.assert_allclose(s.mean(axis=1), 0.0, atol=1e-6)
        np.testing.assert_allclose(s.std(axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(g[:, None] * s + b[:, None], c, rtol=1e-6, atol=1e-9)

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
    def test_scale_covariance(self, seed, s):
        rng = np.random.default_rng(seed)
        c = rng.normal(size=(30, 8))
        s0, g0, _ = normalize_grids(c)
        s1, g1, _ = normalize_grids(s * c)
        np.testing.assert_allclose(s1, s0, atol=1e-9)
        np.testing.assert_allclose(g1, s * g0, rtol=1e-9)

    def test_negative_scale_flips_shape(self):
        # gains are nonnegative, so a negative scale moves the sign into the shape
        c = np.random.default_rng(0).normal(size=(10, 6))
        s0, g0, _ = normalize_grids(c)
        s1, g1, _ = normalize_grids(-3.0 * c)
        np.testing.assert_allclose(s1, -s0, atol=1e-12)
        np.testing.assert_allclose(g1, 3.0 * g0, rtol=1e-12)


class TestKMeans:
    def test_single_centroid_is_mean(self):
        x = np.random.default_rng(0).normal(size=(50, 6))
        cb = kmeans_codebook(x, 1)
        np.testing.assert_allclose(cb.entries[0], x.mean(axis=0), atol=1e-12)

    def test_distinct_shapes_recovered(self):
        x = np.random.default_rng(1).normal(size=(7, 5))
        cb = kmeans_codebook(x, 7, seed=3)
        assert cb.meta.inertia == 0.0
        got = sorted(map(tuple, cb.entries))
        assert got == sorted(map(tuple, x))

    def test_four_point_example_matches_brute_force(self):
        x = np.array([[-1, 1], [-0.9, 0.9], [1, -1], [0.9, -0.9]], dtype=float)
        best = None
        for labels in itertools.product([0, 1], repeat=4):
            if len(set(labels)) < 2:
                continue
            lab = np.array(labels)
            cents = np.array([x[lab == k].mean(axis=0) for k in (0, 1)])
            sse = ((x - cents[lab]) ** 2).sum()
            if best is None or sse < best[0]:
                best = (sse, cents)
        cb = kmeans_codebook(x, 2, seed=0)
        got = sorted(map(tuple, np.round(cb.entries, 12)))
        want = sorted(map(tuple, np.round(best[1], 12)))
        assert got == want == [(-0.95, 0.95), (0.95, -0.95)]

    def test_padding_flag(self):
        x = np.repeat(np.array([[1.0, -1.0], [-1.0, 1.0]]), 3, axis=0)
        cb = kmeans_codebook(x, 5)
        assert cb.K == 5 and cb.meta.padded
        np.testing.assert_array_equal(cb.entries[2:], np.repeat(cb.entries[1:2], 3, axis=0))

    @given(st.integers(0, 2**32 - 1))
    def test_inertia_non_increasing(self, seed):
        x = np.random.default_rng(seed).normal(size=(80, 6))
        hist = kmeans_codebook(x, 6, iters=30, seed=seed).meta.inertia_history
        assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(hist, hist[1:]))

    def test_minibatch_path(self):
        rng = np.random.default_rng(2)
        centers = rng.normal(size=(4, 6)) * 5
        x = centers[rng.integers(0, 4, size=600)] + 0.01 * rng.normal(size=(600, 6))
        cb = kmeans_codebook(x, 4, iters=50, batch=64, seed=0)
        d = ((centers[:, None, :] - cb.values()[None]) ** 2).sum(axis=2)
        assert d.min(axis=1).max() < 1e-2

    def test_deterministic(self):
        x = np.random.default_rng(5).normal(size=(100, 4))
        a = kmeans_codebook(x, 8, seed=11)
        b = kmeans_codebook(x, 8, seed=11)
        np.testing.assert_array_equal(a.entries, b.entries)

    def test_invalid_K(self):
        with pytest.raises(ValueError):
            kmeans_codebook(np.zeros((3, 2)), 0)


class TestAssign:
    def test_identity(self):
        rows = np.random.default_rng(0).normal(size=(6, 4))
        np.testing.assert_array_equal(assign_indices(rows, Codebook(rows)), np.arange(6))

    def test_tie_lowest_index(self):
        cb = np.zeros((6, 2))
        cb[2] = [1.0, 0.0]
        cb[5] = [-1.0, 0.0]
        cb[[0, 1, 3, 4]] = 50.0
        assert assign_indices(np.zeros((1, 2)), Codebook(cb))[0] == 2

    @given(st.integers(0, 2**32 - 1), st.integers(1, 64), st.integers(1, 200))
    def test_brute_force(self, seed, K, E):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(E, 5))
        cb = rng.normal(size=(K, 5))
        want = [min(range(K), key=lambda k: (float(((x[e] - cb[k]) ** 2).sum()), k)) for e in range(E)]
        np.testing.assert_array_equal(assign_indices(x, Codebook(cb)), want)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            assign_indices(np.zeros((2, 3)), Codebook(np.zeros((2, 4))))


class TestCompress:
    def test_two_prototypes_exact(self):
        rng = np.random.default_rng(0)
        layer, _ = layer_from_shapes(rng, rng.normal(size=(2, 8)), 4, 5)
        cl = compress_layer(layer, 2)
        assert r_squared(layer, reconstruct_layer(cl)) >= 1 - 1e-6

    def test_k1_all_zero_indices(self):
        layer = KanLayer(np.random.default_rng(1).normal(size=(3, 3, 6)))
        cl = compress_layer(layer, 1)
        assert not cl.indices.any()

    def test_k_monotone_on_trained(self, trained_1x16):
        net, _ = trained_1x16
        small = max(network_r_squared(net, compress_network(net, 4, VQConfig(restarts=3, seed=s)))[1] for s in range(3))
        large = max(network_r_squared(net, compress_network(net, 8, VQConfig(restarts=3, seed=s)))[1] for s in range(3))
        assert large >= small - 0.01

    def test_storage_dtypes(self):
        layer = KanLayer(np.random.default_rng(2).normal(size=(2, 3, 4)))
        cl = compress_layer(layer, 3)
        assert cl.codebook.entries.dtype == np.float32
        assert cl.gains.dtype == np.float32 and cl.biases.dtype == np.float32
        assert cl.indices.dtype == np.uint16
        assert compress_layer(layer, 70000).indices.dtype == np.uint32

    def test_restarts_never_worse(self):
        layer = KanLayer(np.random.default_rng(3).normal(size=(6, 6, 8)))
        one = compress_layer(layer, 4, VQConfig(restarts=1, seed=0))
        many = compress_layer(layer, 4, VQConfig(restarts=5, seed=0))
        assert r_squared(layer, reconstruct_layer(many)) >= r_squared(layer, reconstruct_layer(one)) - 1e-6

    def test_degenerate_edges_reconstruct_to_bias(self):
        c = np.random.default_rng(4).normal(size=(2, 2, 5))
        c[1, 0] = 0.75
        cl = compress_layer(KanLayer(c), 2)
        np.testing.assert_allclose(reconstruct_grid(cl, 1, 0).coefficients, 0.75)

    def test_forward_exact_for_distinct_shapes(self):
        rng = np.random.default_rng(6)
        protos = rng.normal(size=(3, 6))
        l1, _ = layer_from_shapes(rng, protos, 2, 4)
        l2, _ = layer_from_shapes(rng, protos, 4, 1)
        from holoquant.kan import KanNetwork

        net = KanNetwork([l1, l2])
        cn = compress_network(net, 3)
        x = rng.uniform(-1, 1, size=(50, 2))
        err = np.abs(network_forward(net, x) - network_forward(reconstruct_network(cn), x)).max()
        assert err < 1e-6


class TestReconstruct:
    @staticmethod
    def layer(gain, bias, row):
        return CompressedLayer(
            Codebook(np.array([row], dtype=np.float32)),
            np.zeros(1, dtype=np.uint16),
            np.array([gain], dtype=np.float32),
            np.array([bias], dtype=np.float32),
            1, 1,
        )

    def test_hand_arithmetic(self):
        grid = reconstruct_grid(self.layer(2.0, 1.0, [-1.0, 0.0, 1.0]), 0, 0)
        np.testing.assert_array_equal(grid.coefficients, [-1.0, 1.0, 3.0])

    def test_zero_gain(self):
        grid = reconstruct_grid(self.layer(0.0, 0.5, [-1.0, 0.0, 1.0]), 0, 0)
        np.testing.assert_array_equal(grid.coefficients, [0.5, 0.5, 0.5])

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            reconstruct_grid(self.layer(1.0, 0.0, [0.0, 1.0]), 1, 0)

    def test_index_beyond_codebook_rejected(self):
        with pytest.raises(IndexError):
            CompressedLayer(
                Codebook(np.zeros((2, 3), dtype=np.float32)),
                np.array([2], dtype=np.uint16),
                np.ones(1, dtype=np.float32),
                np.zeros(1, dtype=np.float32),
                1, 1,
            )


class TestRSquared:
    def test_identical(self):
        c = np.random.default_rng(0).normal(size=(5, 4))
        assert r_squared(c, c) == 1.0

    def test_mean_grid(self):
        c = np.random.default_rng(1).normal(size=(5, 4))
        assert r_squared(c, np.repeat(c.mean(axis=0, keepdims=True), 5, axis=0)) == pytest.approx(0.0, abs=1e-12)

    def test_zero_denominator(self):
        c = np.ones((3, 4))
        assert r_squared(c, c) == 1.0
        assert r_squared(c, c + 1) == -math.inf

    def test_accepts_grid_lists(self):
        grids = [SplineGrid(np.array([0.0, 1.0])), SplineGrid(np.array([1.0, 0.0]))]
        assert r_squared(grids, grids) == 1.0

    def test_scope_mismatch(self):
        with pytest.raises(ShapeError):
            r_squared(np.zeros((3, 4)), np.zeros((2, 4)))

    @given(st.integers(0, 2**32 - 1))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(12, 5))
        b = a + 0.3 * rng.normal(size=a.shape)
        p = rng.permutation(12)
        assert r_squared(a[p], b[p]) == pytest.approx(r_squared(a, b), rel=1e-12)

    def test_network_aggregate(self, trained_1x16):
        net, _ = trained_1x16
        per_layer, agg = network_r_squared(net, compress_network(net, 4))
        assert len(per_layer) == 2
        assert min(per_layer) - 1e-9 <= agg or agg <= max(per_layer) + 1e-9
