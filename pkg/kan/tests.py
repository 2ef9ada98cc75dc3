# kan/tests.py
import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from numerics import ops
from numerics.exceptions import ConfigError, DimensionError
from numerics.gradcheck import grad_check
from numerics.tensor import Tensor, precision

from .layers import (
    KanLayer, MlpMixer, TokBlock, bspline_basis, fit_coefficients, kan_layer_forward,
    tok_kan_forward, tok_mlp_forward, uniform_knots,
)


# ---------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------
def t64(values):
    return Tensor(values, dtype=np.float64)


def zeros_like(t):
    return Tensor(np.zeros(t.shape), dtype=np.float64, requires_grad=True, name=t.name)


def layer64(in_dim, out_dim, seed=0, **kwargs):
    with precision(np.float64):
        return KanLayer(in_dim, out_dim, np.random.default_rng(seed), **kwargs)


def block64(dim, seed=0, **kwargs):
    with precision(np.float64):
        return TokBlock(dim, np.random.default_rng(seed), **kwargs)


def cox_de_boor(i, p, x, t):
    """Textbook recursive definition, one basis function at a time."""
    if p == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    left = (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(i, p - 1, x, t)
    right = (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(i + 1, p - 1, x, t)
    return left + right


def identity_coeffs(layer):
    coeffs = np.zeros(layer.spline_coeffs.shape)
    fitted = fit_coefficients(lambda v: v, layer.knots, layer.order)
    for i in range(layer.in_dim):
        coeffs[i, i] = fitted
    return Tensor(coeffs, dtype=np.float64, requires_grad=True)


def weighted_sum(out, seed=99):
    w = np.random.default_rng(seed).normal(size=out.shape)
    return ops.sum(ops.mul(out, w))


# ---------------------------------------------------------------------
# B-spline basis
# ---------------------------------------------------------------------
class KnotTests(SimpleTestCase):
    def test_knots_are_increasing_and_symmetric(self):
        knots = uniform_knots(5, 3, 1.0)
        self.assertEqual(len(knots), 5 + 2 * 3 + 1)
        self.assertTrue(np.all(np.diff(knots) > 0))
        assert_allclose(knots + knots[::-1], 0.0, atol=1e-15)
        assert_allclose([knots[3], knots[-4]], [-1.0, 1.0], atol=1e-15)

    def test_invalid_grid(self):
        with self.assertRaises(ConfigError):
            uniform_knots(0, 3)
        with self.assertRaises(ConfigError):
            uniform_knots(5, 0)


class BasisTests(SimpleTestCase):
    def test_partition_of_unity_on_random_points(self):
        knots = uniform_knots(5, 3, 1.0)
        x = np.random.default_rng(0).uniform(-1.0, 1.0, 10_000)
        basis = bspline_basis(x, knots, 3)
        self.assertEqual(basis.shape, (10_000, 8))
        self.assertTrue(np.all(basis >= 0))
        assert_allclose(basis.sum(axis=-1), 1.0, atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 4), st.floats(0.1, 5.0), st.floats(-1.0, 1.0))
    def test_partition_of_unity_for_any_grid(self, grid, order, span, u):
        knots = uniform_knots(grid, order, span)
        basis = bspline_basis(u * span, knots, order)
        self.assertEqual(basis.shape, (grid + order,))
        self.assertAlmostEqual(basis.sum(), 1.0, places=9)

    def test_linear_order_at_knots_is_one_hot(self):
        knots = uniform_knots(4, 1, 1.0)
        for x in knots[1:-1]:
            basis = bspline_basis(x, knots, 1)
            self.assertEqual(int(np.sum(basis == 1.0)), 1, x)
            self.assertEqual(int(np.sum(basis == 0.0)), basis.size - 1, x)

    def test_cubic_sweep_matches_recursive_definition(self):
        knots = uniform_knots(5, 3, 1.0)
        sweep = np.linspace(-1.0, 1.0, 801)[:-1]
        basis = bspline_basis(sweep, knots, 3)
        for row, x in zip(basis, sweep):
            expected = [cox_de_boor(i, 3, x, knots) for i in range(8)]
            assert_allclose(row, expected, atol=1e-12)

    def test_out_of_range_is_clamped(self):
        knots = uniform_knots(5, 3, 1.0)
        assert_allclose(bspline_basis(7.0, knots, 3), bspline_basis(1.0, knots, 3), atol=1e-12)
        assert_allclose(bspline_basis(-3.0, knots, 3), bspline_basis(-1.0, knots, 3), atol=1e-12)


# ---------------------------------------------------------------------
# KAN layer
# ---------------------------------------------------------------------
class KanLayerTests(SimpleTestCase):
    def test_zero_weights_give_zero_output(self):
        layer = layer64(3, 2)
        layer.spline_coeffs = zeros_like(layer.spline_coeffs)
        layer.base_weight = zeros_like(layer.base_weight)
        z = t64(np.random.default_rng(1).normal(size=(2, 4, 3)))
        assert_array_equal(kan_layer_forward(z, layer).data, np.zeros((2, 4, 2)))

    def test_least_squares_fit_reproduces_identity(self):
        layer = layer64(1, 1)
        layer.base_weight = zeros_like(layer.base_weight)
        layer.spline_coeffs = identity_coeffs(layer)
        x = np.random.default_rng(2).uniform(-1, 1, size=(1, 50, 1))
        assert_allclose(kan_layer_forward(t64(x), layer).data, x, atol=1e-3)

    def test_identity_leaning_init(self):
        layer = layer64(4, 4, seed=3)
        x = np.random.default_rng(3).uniform(-0.5, 0.5, size=(1, 20, 4))
        out = kan_layer_forward(t64(x), layer).data
        self.assertLess(np.abs(out - x).max(), 0.5)

    def test_continuous_across_knots(self):
        layer = layer64(2, 3, seed=4)
        for knot in layer.knots[3:-3]:
            lo = kan_layer_forward(t64(np.full((1, 1, 2), knot - 1e-9)), layer).data
            hi = kan_layer_forward(t64(np.full((1, 1, 2), knot + 1e-9)), layer).data
            assert_allclose(lo, hi, atol=1e-6)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            kan_layer_forward(t64(np.zeros((1, 2, 5))), layer64(3, 3))

    def test_parameter_count(self):
        layer = layer64(3, 5, grid_size=6, order=2)
        self.assertEqual(layer.parameter_count(), KanLayer.count(3, 5, 6, 2))

    def test_gradients(self):
        layer = layer64(3, 2, seed=5)
        z = t64(np.random.default_rng(5).normal(0.0, 0.6, size=(2, 3, 3)))
        report = grad_check(lambda *_: weighted_sum(kan_layer_forward(z, layer)), [z] + layer.parameters())
        self.assertTrue(report.passed, report)


# ---------------------------------------------------------------------
# Tokenized blocks
# ---------------------------------------------------------------------
class TokBlockTests(SimpleTestCase):
    def setUp(self):
        self.z = t64(np.random.default_rng(0).uniform(-1, 1, size=(2, 12, 4)))

    def center_kernel(self, block):
        kernel = np.zeros(block.dw_weight.shape)
        kernel[:, 0, 1, 1] = 1.0
        block.dw_weight = t64(kernel)

    def test_identity_mixer_reduces_to_layernorm(self):
        block = block64(4)
        kan = block.mixer.layers[0]
        kan.base_weight = zeros_like(kan.base_weight)
        kan.spline_coeffs = identity_coeffs(kan)
        self.center_kernel(block)
        out = tok_kan_forward(self.z, block, 3, 4).data
        assert_allclose(out, ops.layernorm(ops.mul(self.z, 2.0)).data, atol=1e-9)
        # LN(2z, eps) == LN(z, eps / 4)
        assert_allclose(out, ops.layernorm(self.z, eps=2.5e-6).data, atol=1e-9)

    def test_zero_kan_mixer_leaves_residual(self):
        block = block64(4)
        for layer in block.mixer.layers:
            layer.base_weight = zeros_like(layer.base_weight)
            layer.spline_coeffs = zeros_like(layer.spline_coeffs)
        assert_array_equal(tok_kan_forward(self.z, block, 3, 4).data, ops.layernorm(self.z).data)

    def test_zero_mlp_mixer_leaves_residual(self):
        block = block64(4, mixer="mlp")
        for name in ("w0", "b0", "w1", "b1"):
            setattr(block.mixer, name, zeros_like(getattr(block.mixer, name)))
        assert_array_equal(tok_mlp_forward(self.z, block, 4, 3).data, ops.layernorm(self.z).data)

    def test_shape_and_token_moments(self):
        block = block64(4, seed=2)
        out = tok_kan_forward(self.z, block, 3, 4).data
        self.assertEqual(out.shape, self.z.shape)
        assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        assert_allclose(out.var(axis=-1), 1.0, atol=1e-3)

    def test_mixer_kind_is_enforced(self):
        with self.assertRaises(ConfigError):
            tok_mlp_forward(self.z, block64(4), 3, 4)
        with self.assertRaises(ConfigError):
            tok_kan_forward(self.z, block64(4, mixer="mlp"), 3, 4)
        with self.assertRaises(ConfigError):
            block64(4, mixer="conv")

    def test_token_grid_mismatch(self):
        with self.assertRaises(DimensionError):
            tok_kan_forward(self.z, block64(4), 3, 3)

    def test_parameter_counts_follow_formulas(self):
        kan = block64(8, kan_layers=2, grid_size=4, order=3)
        mlp = block64(8, mixer="mlp", mlp_hidden=16)
        self.assertEqual(kan.parameter_count(), TokBlock.count(8, "kan", 2, 4, 3))
        self.assertEqual(mlp.parameter_count(), TokBlock.count(8, "mlp", mlp_hidden=16))
        self.assertEqual(MlpMixer.count(8, 16), 8 * 16 + 16 + 16 * 8 + 8)
        self.assertNotEqual(kan.parameter_count(), mlp.parameter_count())

    def test_tok_kan_gradients(self):
        block = block64(4, seed=6)
        z = t64(np.random.default_rng(6).normal(0.0, 0.5, size=(1, 6, 4)))
        report = grad_check(
            lambda *_: weighted_sum(tok_kan_forward(z, block, 2, 3)), [z] + block.parameters(),
            max_coords=10,
        )
        self.assertTrue(report.passed, report)

    def test_tok_mlp_gradients(self):
        block = block64(4, seed=7, mixer="mlp")
        z = t64(np.random.default_rng(7).normal(size=(1, 6, 4)))
        report = grad_check(
            lambda *_: weighted_sum(tok_mlp_forward(z, block, 3, 2)), [z] + block.parameters(),
            max_coords=10,
        )
        self.assertTrue(report.passed, report)
