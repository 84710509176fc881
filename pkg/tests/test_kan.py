import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from holoquant.kan import (
    KanLayer,
    KanNetwork,
    ShapeError,
    SplineGrid,
    dense_runtime_bytes,
    eval_spline,
    layer_forward,
    locate,
    network_forward,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
grids = st.integers(2, 40).flatmap(lambda g: arrays(np.float64, g, elements=finite))


def oracle_eval(coeffs, x, lo=-1.0, hi=1.0):
    """Scalar reference: clamp, find the bracketing nodes by scanning, interpolate."""
    g = len(coeffs)
    x = min(max(x, lo), hi)
    nodes = [lo + i * (hi - lo) / (g - 1) for i in range(g)]
    for i in range(g - 1):
        if nodes[i] <= x <= nodes[i + 1]:
            t = (x - nodes[i]) / (nodes[i + 1] - nodes[i])
            return (1 - t) * coeffs[i] + t * coeffs[i + 1]
    return coeffs[-1]


class TestEvalSpline:
    grid = SplineGrid(np.array([0.0, 1.0, 2.0, 3.0]))

    def test_left_node(self):
        assert eval_spline(self.grid, -1.0) == 0.0

    def test_midpoint_between_inner_nodes(self):
        assert eval_spline(self.grid, 0.0) == pytest.approx(1.5, abs=1e-15)

    def test_clamps_above(self):
        assert eval_spline(self.grid, 2.0) == 3.0

    def test_clamps_below(self):
        assert eval_spline(self.grid, -7.5) == 0.0

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_non_finite_input(self, bad):
        with pytest.raises(ValueError):
            eval_spline(self.grid, bad)

    def test_spacing_derived(self):
        assert self.grid.spacing == pytest.approx(2.0 / 3.0)
        np.testing.assert_allclose(self.grid.nodes(), [-1, -1 / 3, 1 / 3, 1])

    @pytest.mark.parametrize(
        "coeffs, lo, hi",
        [([1.0], -1, 1), ([0.0, math.nan], -1, 1), ([0.0, 1.0], 1, 1), ([0.0, 1.0], 2, -2)],
    )
    def test_invalid_grids(self, coeffs, lo, hi):
        with pytest.raises(ValueError):
            SplineGrid(np.array(coeffs), lo, hi)


@given(grids)
def test_nodes_reproduce_coefficients_exactly(c):
    grid = SplineGrid(c)
    for i, x in enumerate(grid.nodes()):
        assert eval_spline(grid, x) == c[i]


@given(grids, st.floats(-3, 3))
def test_matches_scan_oracle(c, x):
    got = eval_spline(SplineGrid(c), x)
    want = oracle_eval(list(c), x)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-9)


@given(grids, st.floats(-5, 5))
def test_clamping_invariant(c, x):
    grid = SplineGrid(c)
    assert eval_spline(grid, x) == eval_spline(grid, min(max(x, -1.0), 1.0))


@given(grids, st.floats(-1, 1), st.floats(0, 0.2))
def test_lipschitz(c, x, delta):
    grid = SplineGrid(c)
    x2 = min(x + delta, 1.0)
    lip = np.max(np.abs(np.diff(c))) / grid.spacing
    assert abs(eval_spline(grid, x) - eval_spline(grid, x2)) <= lip * (x2 - x) * (1 + 1e-9) + 1e-9


@given(grids, st.floats(-2, 2))
def test_value_within_coefficient_range(c, x):
    v = eval_spline(SplineGrid(c), x)
    assert c.min() - 1e-9 <= v <= c.max() + 1e-9


def test_locate_snaps_near_nodes():
    idx, f = locate(np.array([1 / 3 - 1e-13, 1.0, -1.0]), -1.0, 1.0, 4)
    np.testing.assert_array_equal(idx, [2, 2, 0])
    np.testing.assert_array_equal(f, [0.0, 1.0, 0.0])


class TestLayerForward:
    def test_single_edge(self):
        layer = KanLayer(np.array([0.0, 1.0, 2.0, 3.0]).reshape(1, 1, 4))
        np.testing.assert_allclose(layer_forward(layer, [0.0]), [1.5])

    def test_two_inputs_sum(self):
        layer = KanLayer(np.tile([0.0, 1.0, 2.0, 3.0], (2, 1, 1)))
        np.testing.assert_array_equal(layer_forward(layer, [-1.0, 1.0]), [3.0])

    def test_zero_layer(self):
        layer = KanLayer(np.zeros((3, 5, 7)))
        np.testing.assert_array_equal(layer_forward(layer, [0.3, -2.0, 0.9]), np.zeros(5))

    def test_width_mismatch(self):
        layer = KanLayer(np.zeros((3, 2, 4)))
        with pytest.raises(ShapeError):
            layer_forward(layer, [0.0, 1.0])

    def test_mismatched_network(self):
        with pytest.raises(ShapeError):
            KanNetwork([KanLayer(np.zeros((2, 3, 4))), KanLayer(np.zeros((2, 1, 4)))])

    def test_empty_network(self):
        with pytest.raises(ValueError):
            KanNetwork([])

    def test_edge_sum_oracle(self):
        rng = np.random.default_rng(3)
        layer = KanLayer(rng.normal(size=(3, 4, 6)))
        x = rng.uniform(-1.3, 1.3, size=3)
        want = [sum(oracle_eval(list(layer.coefficients[i, j]), x[i]) for i in range(3)) for j in range(4)]
        np.testing.assert_allclose(layer_forward(layer, x), want, rtol=1e-12, atol=1e-12)

    def test_batch_matches_rows(self):
        rng = np.random.default_rng(4)
        layer = KanLayer(rng.normal(size=(2, 3, 5)))
        xb = rng.uniform(-1, 1, size=(7, 2))
        yb = layer_forward(layer, xb)
        for x, y in zip(xb, yb):
            np.testing.assert_array_equal(layer_forward(layer, x), y)

    @given(st.integers(0, 2**32 - 1))
    def test_linear_in_coefficients(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(2, 3, 2, 5))
        x = rng.uniform(-1.5, 1.5, size=3)
        lhs = layer_forward(KanLayer(a + b), x)
        rhs = layer_forward(KanLayer(a), x) + layer_forward(KanLayer(b), x)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


class TestNetworkForward:
    def test_single_layer_identity(self):
        rng = np.random.default_rng(0)
        layer = KanLayer(rng.normal(size=(2, 3, 4)))
        x = rng.uniform(-1, 1, size=2)
        np.testing.assert_array_equal(network_forward(KanNetwork([layer]), x), layer_forward(layer, x))

    def test_zero_network(self):
        net = KanNetwork([KanLayer(np.zeros((2, 3, 4))), KanLayer(np.zeros((3, 1, 4)))])
        np.testing.assert_array_equal(network_forward(net, [0.1, 0.2]), [0.0])

    def test_composed_by_hand(self):
        # hidden value 2x saturates at the second layer's domain edge; |h| shape on top
        g1 = np.array([-2.0, 0.0, 2.0])
        g2 = np.array([1.0, 0.0, 1.0])
        net = KanNetwork([KanLayer(g1.reshape(1, 1, 3)), KanLayer(g2.reshape(1, 1, 3))])
        for x in (-0.9, -0.25, 0.1, 0.4, 1.3):
            h = oracle_eval(list(g1), x)
            want = oracle_eval(list(g2), h)
            assert network_forward(net, [x])[0] == pytest.approx(want, abs=1e-14)


class TestDenseBytes:
    def test_small(self):
        net = KanNetwork([KanLayer(np.zeros((10, 10, 10)))])
        assert dense_runtime_bytes(net) == 4000

    def test_minimum(self):
        assert dense_runtime_bytes(KanNetwork([KanLayer(np.zeros((1, 1, 2)))])) == 8

    def test_sums_layers(self):
        net = KanNetwork([KanLayer(np.zeros((4, 8, 5))), KanLayer(np.zeros((8, 2, 5)))])
        assert dense_runtime_bytes(net) == (32 + 16) * 5 * 4


def test_layer_keeps_float32():
    layer = KanLayer(np.zeros((2, 2, 3), dtype=np.float32))
    assert layer.coefficients.dtype == np.float32
    assert layer.astype(np.float64).coefficients.dtype == np.float64
