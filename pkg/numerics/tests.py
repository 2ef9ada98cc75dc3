# numerics/tests.py
import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from . import ops
from .exceptions import ContractError, DimensionError, NumericsError
from .gradcheck import grad_check, relative_error
from .module import Module, parameter
from .tensor import Tape, Tensor, debug_checks, default_dtype, precision, record


# ---------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------
def t64(values, name=None):
    return Tensor(values, dtype=np.float64, name=name)


def rand64(*shape, seed=0, scale=1.0):
    return t64(np.random.default_rng(seed).normal(0.0, scale, size=shape))


def weighted_sum(out, seed=99):
    """Scalar probe with random weights so every output element matters."""
    w = np.random.default_rng(seed).normal(size=out.shape)
    return ops.sum(ops.mul(out, w))


# ---------------------------------------------------------------------
# Tensor / Tape
# ---------------------------------------------------------------------
class TensorTests(SimpleTestCase):
    def test_default_dtype_is_32_bit_and_precision_switches(self):
        self.assertEqual(default_dtype(), np.float32)
        with precision(np.float64):
            self.assertEqual(Tensor([1.0]).dtype, np.float64)
        self.assertEqual(Tensor([1.0]).dtype, np.float32)

    def test_item_requires_single_value(self):
        self.assertEqual(t64([[3.5]]).item(), 3.5)
        with self.assertRaises(ContractError):
            t64([1.0, 2.0]).item()

    def test_operators_delegate_to_ops(self):
        a, b = t64([1.0, 2.0]), t64([3.0, 5.0])
        assert_array_equal((a + b).data, [4.0, 7.0])
        assert_array_equal((b - a).data, [2.0, 3.0])
        assert_array_equal((a * b).data, [3.0, 10.0])
        assert_array_equal((b / a).data, [3.0, 2.5])
        assert_array_equal((-a).data, [-1.0, -2.0])
        assert_array_equal((2.0 * a).data, [2.0, 4.0])


class TapeTests(SimpleTestCase):
    def test_outside_a_tape_nothing_is_recorded(self):
        w = parameter([1.0, 2.0])
        out = ops.mul(w, 3.0)
        self.assertFalse(out.requires_grad)
        self.assertTrue(out.is_leaf)

    def test_backward_sets_leaf_grads_with_matching_shapes(self):
        with precision(np.float64):
            w = parameter(np.ones((2, 3)))
            b = parameter(np.zeros(3))
        with Tape() as tape:
            loss = ops.sum(ops.add(w, b))
        tape.backward(loss)
        assert_array_equal(w.grad, np.ones((2, 3)))
        # broadcast over the leading axis sums back down
        assert_array_equal(b.grad, [2.0, 2.0, 2.0])

    def test_shared_input_accumulates_over_uses(self):
        x = parameter([3.0])
        with Tape() as tape:
            loss = ops.sum(ops.mul(x, x))
        tape.backward(loss)
        assert_allclose(x.grad, [6.0])

    def test_backward_runs_once(self):
        x = parameter([1.0])
        with Tape() as tape:
            loss = ops.sum(x)
        tape.backward(loss)
        with self.assertRaises(ContractError):
            tape.backward(loss)

    def test_backward_needs_scalar(self):
        x = parameter([1.0, 2.0])
        with Tape() as tape:
            out = ops.mul(x, 2.0)
        with self.assertRaises(ContractError):
            tape.backward(out)

    def test_debug_checks_flag_non_finite_outputs(self):
        a, b = t64([1.0]), t64([0.0])
        with np.errstate(divide="ignore"), debug_checks():
            with self.assertRaises(NumericsError):
                ops.div(a, b)
        with np.errstate(divide="ignore"):
            self.assertTrue(np.isinf(ops.div(a, b).data[0]))


# ---------------------------------------------------------------------
# Arithmetic / shape ops
# ---------------------------------------------------------------------
class MatmulTests(SimpleTestCase):
    def test_identity(self):
        out = ops.matmul(t64(np.eye(2)), t64([[1, 2], [3, 4]]))
        assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_row_times_column(self):
        out = ops.matmul(t64([[1, 2]]), t64([[3], [4]]))
        assert_array_equal(out.data, [[11]])

    def test_shape_mismatch_names_both_shapes(self):
        with self.assertRaisesMessage(DimensionError, "(2, 3) and (2, 3)"):
            ops.matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))

    def test_gradients_match_finite_differences(self):
        a, b = rand64(3, 4, seed=1), rand64(4, 2, seed=2)
        report = grad_check(lambda x, y: weighted_sum(ops.matmul(x, y)), [a, b])
        self.assertTrue(report.passed, report)

    def test_linear_applies_weight_transpose_and_bias(self):
        x = t64([[1.0, 2.0]])
        w = t64([[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]])
        out = ops.linear(x, w, t64([0.5, 0.0, -1.0]))
        assert_array_equal(out.data, [[1.5, 3.0, 3.0]])


class ShapeOpTests(SimpleTestCase):
    def test_take_with_inverse_round_trips(self):
        x = t64(np.arange(6.0).reshape(1, 6))
        order = np.array([5, 0, 3, 1, 4, 2])
        inverse = np.argsort(order)
        y = ops.take(x, order, axis=1, inverse=inverse)
        assert_array_equal(ops.take(y, inverse, axis=1).data, x.data)

    def test_take_gradients_with_and_without_inverse(self):
        order = np.array([2, 0, 1])
        x = rand64(2, 3, seed=4)
        r1 = grad_check(lambda v: weighted_sum(ops.take(v, order, 1, inverse=np.argsort(order))), x)
        r2 = grad_check(lambda v: weighted_sum(ops.take(v, [0, 0, 2], 1)), x)
        self.assertTrue(r1.passed and r2.passed, (r1, r2))

    def test_concat_and_slice_gradients(self):
        a, b = rand64(2, 3, seed=5), rand64(1, 3, seed=6)

        def f(x, y):
            both = ops.concat([x, y], axis=0)
            return weighted_sum(ops.slice_axis(both, 1, 3, axis=0))

        self.assertTrue(grad_check(f, [a, b]).passed)

    def test_upsample_nearest_blocks(self):
        x = t64([[[[1, 2], [3, 4]]]])
        out = ops.upsample_nearest(x).data[0, 0]
        assert_array_equal(out, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_reductions_and_clamp_gradients(self):
        x = rand64(2, 3, 4, seed=7)

        def f(v):
            m = ops.mean(ops.clamp(v, -0.8, 0.8), axis=(0, 2), keepdims=True)
            return weighted_sum(ops.transpose(ops.reshape(ops.sum(v, axis=1), (4, 2)), (1, 0))) + ops.sum(m)

        self.assertTrue(grad_check(f, x).passed)


# ---------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------
class Conv2dTests(SimpleTestCase):
    def test_single_weight_1x1_is_identity(self):
        x = rand64(1, 1, 4, 5, seed=1)
        out = ops.conv2d(x, t64(np.ones((1, 1, 1, 1))))
        assert_array_equal(out.data, x.data)

    def test_box_filter_on_ones(self):
        x = t64(np.ones((1, 1, 3, 3)))
        out = ops.conv2d(x, t64(np.full((1, 1, 3, 3), 1.0 / 9)), padding=1).data[0, 0]
        assert_allclose(out[1, 1], 1.0, atol=1e-15)
        assert_allclose(out[0, 0], 4.0 / 9, atol=1e-15)

    def test_stride_two_output_shape(self):
        out = ops.conv2d(t64(np.ones((1, 1, 8, 8))), t64(np.ones((1, 1, 3, 3))), padding=1, stride=2)
        self.assertEqual(out.shape, (1, 1, 4, 4))

    def test_cross_correlation_does_not_flip_kernel(self):
        x = t64(np.arange(9.0).reshape(1, 1, 3, 3))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 0, 0] = 1.0
        self.assertEqual(ops.conv2d(x, t64(k)).data[0, 0, 0, 0], 0.0)

    def test_depthwise_ones_is_identity_per_channel(self):
        x = rand64(2, 3, 4, 4, seed=2)
        out = ops.conv2d(x, t64(np.ones((3, 1, 1, 1))), groups=3)
        assert_array_equal(out.data, x.data)

    def test_invalid_geometry(self):
        with self.assertRaises(DimensionError):
            ops.conv2d(t64(np.ones((1, 3, 4, 4))), t64(np.ones((2, 1, 3, 3))), groups=2)
        with self.assertRaises(DimensionError):
            ops.conv2d(t64(np.ones((1, 1, 2, 2))), t64(np.ones((1, 1, 5, 5))))

    def test_gradients_dense_strided_and_grouped(self):
        x = rand64(2, 4, 5, 6, seed=3)
        w = rand64(6, 2, 3, 3, seed=4, scale=0.3)
        b = rand64(6, seed=5)
        f = lambda xx, ww, bb: weighted_sum(ops.conv2d(xx, ww, bb, padding=1, stride=2, groups=2))
        report = grad_check(f, [x, w, b])
        self.assertTrue(report.passed, report)


# ---------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------
class LayerNormTests(SimpleTestCase):
    def test_constant_input_maps_to_zero(self):
        assert_array_equal(ops.layernorm(t64([1.0, 1.0, 1.0])).data, [0.0, 0.0, 0.0])

    def test_two_values(self):
        out = ops.layernorm(t64([0.0, 2.0]), eps=1e-5).data
        assert_allclose(out, [-1.0, 1.0], atol=1e-5)

    def test_empty_axis(self):
        with self.assertRaises(DimensionError):
            ops.layernorm(t64(np.zeros((2, 0))))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-10, 10)))
    def test_scale_invariance_and_moments(self, x):
        spread = x.max(axis=-1) - x.min(axis=-1)
        if np.any(spread < 1e-3):
            return
        a = ops.layernorm(t64(x), eps=0.0).data
        b = ops.layernorm(t64(2.0 * x), eps=0.0).data
        assert_allclose(a, b, atol=1e-10)
        assert_allclose(a.mean(axis=-1), 0.0, atol=1e-10)
        assert_allclose(a.var(axis=-1), 1.0, atol=1e-8)

    def test_gradients_with_affine(self):
        x, g, b = rand64(2, 3, 4, seed=1), rand64(4, seed=2), rand64(4, seed=3)
        report = grad_check(lambda xx, gg, bb: weighted_sum(ops.layernorm(xx, gg, bb)), [x, g, b])
        self.assertTrue(report.passed, report)

    def test_group_norm_gradients(self):
        x, g, b = rand64(2, 4, 3, 3, seed=4), rand64(4, seed=5), rand64(4, seed=6)
        report = grad_check(lambda xx, gg, bb: weighted_sum(ops.group_norm(xx, 2, gg, bb)), [x, g, b])
        self.assertTrue(report.passed, report)


# ---------------------------------------------------------------------
# Pointwise
# ---------------------------------------------------------------------
class PointwiseTests(SimpleTestCase):
    def test_known_values(self):
        assert_allclose(ops.sigmoid(t64(0.0)).item(), 0.5, rtol=1e-15)
        assert_allclose(ops.softplus(t64(0.0)).item(), np.log(2.0), rtol=1e-15)
        self.assertEqual(ops.relu(t64([-1.0, 2.0])).data.tolist(), [0.0, 2.0])
        self.assertEqual(ops.exprel(t64(0.0)).item(), 1.0)

    def test_saturation_is_finite(self):
        big = t64([-1000.0, 1000.0])
        for name in ("sigmoid", "silu", "relu", "softplus"):
            with debug_checks():
                out = ops.pointwise(name, big)
            self.assertTrue(np.all(np.isfinite(out.data)), name)
        assert_array_equal(ops.sigmoid(big).data, [0.0, 1.0])

    def test_unknown_name(self):
        with self.assertRaises(ContractError):
            ops.pointwise("tanh", t64([0.0]))

    def test_exprel_is_continuous_through_zero(self):
        z = np.array([-1e-3, -1e-9, 0.0, 1e-9, 1e-3])
        expected = [np.expm1(v) / v if v else 1.0 for v in z]
        assert_allclose(ops.exprel(t64(z)).data, expected, rtol=1e-12)

    def test_gradients(self):
        x = rand64(7, seed=11, scale=2.0)
        for name in ("exp", "sigmoid", "silu", "softplus", "exprel"):
            report = grad_check(lambda v: weighted_sum(ops.pointwise(name, v)), x)
            self.assertTrue(report.passed, (name, report))


# ---------------------------------------------------------------------
# Gradient oracle
# ---------------------------------------------------------------------
class GradCheckTests(SimpleTestCase):
    def test_sum_of_squares_is_exact(self):
        x = t64([1.0, 2.0, 3.0])
        report = grad_check(lambda v: ops.sum(ops.mul(v, v)), x, step=1e-3, tol=1e-9)
        self.assertTrue(report.passed, report)
        self.assertEqual(report.checked, 3)

    def test_non_scalar_output(self):
        with self.assertRaises(ContractError):
            grad_check(lambda v: ops.mul(v, 2.0), t64([1.0, 2.0]))

    def test_requires_64_bit(self):
        with self.assertRaises(ContractError):
            grad_check(lambda v: ops.sum(v), Tensor([1.0], dtype=np.float32))

    def test_corrupted_backward_rule_is_caught(self):
        def bad_square(v):
            return record(v.data ** 2, (v,), lambda g: (g * v.data,), "bad_square")

        report = grad_check(lambda v: ops.sum(bad_square(v)), t64([1.0, -2.0, 3.0]))
        self.assertFalse(report.passed)
        self.assertIn("input[0]", report.worst)

    def test_max_coords_limits_and_is_seeded(self):
        x = rand64(50, seed=3)
        r1 = grad_check(lambda v: ops.sum(ops.silu(v)), x, max_coords=5, seed=1)
        r2 = grad_check(lambda v: ops.sum(ops.silu(v)), x, max_coords=5, seed=1)
        self.assertEqual(r1.checked, 5)
        self.assertEqual(r1.max_rel_error, r2.max_rel_error)

    def test_relative_error_is_absolute_below_one(self):
        self.assertEqual(relative_error(1e-3, 2e-3), 1e-3)
        self.assertEqual(relative_error(10.0, 11.0), 1.0 / 11.0)


# ---------------------------------------------------------------------
# Module
# ---------------------------------------------------------------------
class _Leaf(Module):
    def __init__(self):
        self.weight = parameter(np.zeros((2, 2)), name="weight")
        self.buffer = Tensor(np.zeros(2))


class _Tree(Module):
    def __init__(self):
        self.head = _Leaf()
        self.blocks = [_Leaf(), _Leaf()]
        self.bias = parameter(np.zeros(3), name="bias")


class ModuleTests(SimpleTestCase):
    def test_named_parameters_are_stable_and_skip_buffers(self):
        names = [n for n, _ in _Tree().named_parameters()]
        self.assertEqual(names, ["head.weight", "blocks.0.weight", "blocks.1.weight", "bias"])

    def test_parameter_count(self):
        self.assertEqual(_Tree().parameter_count(), 3 * 4 + 3)
