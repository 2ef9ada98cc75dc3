# ssm/tests.py
import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from numerics import ops
from numerics.exceptions import ConfigError, ContractError, DimensionError
from numerics.gradcheck import grad_check
from numerics.tensor import Tensor, precision

from .s6 import (
    S6Params, default_params, discretize, inverse_softplus, linear_recurrence,
    naive_selective_scan, project, selective_scan,
)
from .scan import (
    STANDARD_DIRECTIONS, ScanDirection, fold, parse_directions, permutation_for, rmerge, unfold,
)
from .sem import SemConfig, SemParams, multiscale_attention, sem_extract, sem_forward


# ---------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------
def t64(values):
    return Tensor(values, dtype=np.float64)


def map2x2():
    return t64([[[[1.0, 2.0], [3.0, 4.0]]]])


def tokens(seq):
    """[B,L,C] with B = C = 1 to a flat list."""
    return seq.data[0, :, 0].tolist()


def s6_params64(d_model, n_state, seed=0, **overrides):
    with precision(np.float64):
        params = S6Params.init(d_model, n_state, np.random.default_rng(seed))
        for name, value in overrides.items():
            setattr(params, name, Tensor(value, requires_grad=True, name=name))
    return params


def skip_only(d_model, n_state):
    return s6_params64(
        d_model, n_state,
        w_c=np.zeros((n_state, d_model)), b_c=np.zeros(n_state), d_skip=np.ones(d_model),
    )


def sem_params64(cfg, seed=0):
    with precision(np.float64):
        return SemParams.init(cfg, np.random.default_rng(seed))


def weighted_sum(out, seed=99):
    w = np.random.default_rng(seed).normal(size=out.shape)
    return ops.sum(ops.mul(out, w))


# ---------------------------------------------------------------------
# Scan
# ---------------------------------------------------------------------
class ScanOrderTests(SimpleTestCase):
    def test_row_major_and_reverse(self):
        self.assertEqual(tokens(unfold(map2x2(), "tl_br")), [1, 2, 3, 4])
        self.assertEqual(tokens(unfold(map2x2(), "br_tl")), [4, 3, 2, 1])

    def test_columns_right_to_left(self):
        self.assertEqual(tokens(unfold(map2x2(), "tr_bl")), [2, 4, 1, 3])
        self.assertEqual(tokens(unfold(map2x2(), "bl_tr")), [3, 1, 4, 2])

    def test_spiral_3x3(self):
        order = permutation_for(ScanDirection.SPIRAL_IN, 3, 3).order
        self.assertEqual(order.tolist(), [0, 1, 2, 5, 8, 7, 6, 3, 4])

    def test_spiral_finishes_each_ring_before_the_next(self):
        h, w = 6, 9
        order = permutation_for("spiral_in", h, w).order
        rows, cols = np.divmod(order, w)
        ring = np.minimum.reduce([rows, cols, h - 1 - rows, w - 1 - cols])
        self.assertTrue(np.all(np.diff(ring) >= 0))

    def test_tl_br_is_plain_reshape(self):
        x = t64(np.random.default_rng(0).normal(size=(2, 3, 4, 5)))
        expected = x.data.reshape(2, 3, 20).transpose(0, 2, 1)
        assert_array_equal(unfold(x, "tl_br").data, expected)

    def test_zero_dimension(self):
        with self.assertRaises(DimensionError):
            permutation_for("tl_br", 0, 3)

    def test_cached_permutations_are_read_only(self):
        perm = permutation_for("tr_bl", 4, 4)
        self.assertIs(perm, permutation_for(ScanDirection.TR_BL, 4, 4))
        with self.assertRaises(ValueError):
            perm.order[0] = 3


class ScanRoundTripTests(SimpleTestCase):
    def test_every_direction_is_a_bijection_up_to_12x12(self):
        for direction in ScanDirection:
            for h in range(1, 13):
                for w in range(1, 13):
                    perm = permutation_for(direction, h, w)
                    assert_array_equal(np.sort(perm.order), np.arange(h * w))
                    assert_array_equal(perm.inverse[perm.order], np.arange(h * w))

    @settings(max_examples=40, deadline=None)
    @given(
        st.sampled_from(list(ScanDirection)),
        st.integers(1, 9),
        st.integers(1, 9),
        st.integers(0, 2 ** 16),
    )
    def test_fold_and_unfold_invert_each_other(self, direction, h, w, seed):
        rng = np.random.default_rng(seed)
        x = t64(rng.normal(size=(2, 3, h, w)))
        assert_array_equal(fold(unfold(x, direction), direction, h, w).data, x.data)
        seq = t64(rng.normal(size=(2, h * w, 3)))
        assert_array_equal(unfold(fold(seq, direction, h, w), direction).data, seq.data)

    def test_fold_br_tl_example(self):
        seq = t64([[[4.0], [3.0], [2.0], [1.0]]])
        assert_array_equal(fold(seq, "br_tl", 2, 2).data, map2x2().data)

    def test_fold_spiral_restores_row_major_map(self):
        seq = t64(np.array([0, 1, 2, 5, 8, 7, 6, 3, 4], dtype=float).reshape(1, 9, 1))
        assert_array_equal(fold(seq, "spiral_in", 3, 3).data.reshape(-1), np.arange(9.0))

    def test_constant_map_gives_constant_sequence(self):
        x = t64(np.full((1, 2, 3, 4), 7.0))
        for direction in ScanDirection:
            self.assertTrue(np.all(unfold(x, direction).data == 7.0))

    def test_fold_length_mismatch(self):
        with self.assertRaises(DimensionError):
            fold(t64(np.zeros((1, 5, 2))), "tl_br", 2, 2)


class DirectionParsingTests(SimpleTestCase):
    def test_parse_text_and_members(self):
        self.assertEqual(parse_directions("tl_br, SPIRAL_IN"), (ScanDirection.TL_BR, ScanDirection.SPIRAL_IN))
        self.assertEqual(parse_directions(STANDARD_DIRECTIONS), STANDARD_DIRECTIONS)

    def test_unknown_and_empty(self):
        with self.assertRaisesMessage(ConfigError, "diagonal"):
            parse_directions("tl_br,diagonal")
        with self.assertRaises(ConfigError):
            parse_directions("")


class RmergeTests(SimpleTestCase):
    def test_single_branch_and_additive_inverse(self):
        x = t64(np.random.default_rng(1).normal(size=(1, 2, 3, 3)))
        assert_array_equal(rmerge([x]).data, x.data)
        assert_array_equal(rmerge([x, -x]).data, np.zeros_like(x.data))

    def test_four_branches_match_elementwise_loop(self):
        rng = np.random.default_rng(2)
        branches = [t64(rng.normal(size=(1, 2, 2, 2))) for _ in range(4)]
        out = rmerge(branches).data
        for idx in np.ndindex(out.shape):
            total = 0.0
            for b in branches:
                total += b.data[idx]
            self.assertEqual(out[idx], total)

    def test_summing_folds_equals_folding_the_sum(self):
        rng = np.random.default_rng(3)
        seqs = [t64(rng.normal(size=(1, 12, 2))) for _ in range(3)]
        merged = rmerge([fold(s, "tr_bl", 3, 4) for s in seqs])
        summed = fold(rmerge(seqs), "tr_bl", 3, 4)
        assert_allclose(merged.data, summed.data, atol=1e-14)

    def test_empty_or_mismatched(self):
        with self.assertRaises(ContractError):
            rmerge([])
        with self.assertRaises(ContractError):
            rmerge([t64(np.zeros((1, 1, 2, 2))), t64(np.zeros((1, 1, 2, 3)))])


# ---------------------------------------------------------------------
# S6
# ---------------------------------------------------------------------
class DiscretizeTests(SimpleTestCase):
    def test_closed_form(self):
        abar, bbar = discretize(1.0, -1.0, 1.0)
        self.assertAlmostEqual(abar, np.exp(-1.0), places=12)
        self.assertAlmostEqual(bbar, 1.0 - np.exp(-1.0), places=12)

    def test_small_step_limit(self):
        abar, bbar = discretize(1e-10, -1.0, 3.0)
        self.assertAlmostEqual(abar, 1.0, places=9)
        assert_allclose(bbar, 3e-10, rtol=1e-9)

    def test_stable_range(self):
        rng = np.random.default_rng(0)
        abar, _ = discretize(rng.uniform(1e-3, 5, 50), -rng.uniform(1e-3, 5, 50), np.ones(50))
        self.assertTrue(np.all((abar > 0) & (abar < 1)))

    def test_contract(self):
        with self.assertRaises(ContractError):
            discretize(0.0, -1.0, 1.0)
        with self.assertRaises(ContractError):
            discretize(1.0, 0.5, 1.0)


class SelectiveScanTests(SimpleTestCase):
    def test_scalar_two_step_unroll(self):
        p = s6_params64(
            1, 1,
            log_neg_a=[[0.0]], d_skip=[0.0],
            w_delta=[[0.0]], b_delta=[float(inverse_softplus(1.0))],
            w_b=[[0.0]], b_b=[1.0], w_c=[[0.0]], b_c=[1.0],
        )
        y = selective_scan(t64([[[1.0], [1.0]]]), p).data.reshape(-1)
        assert_allclose(y, [1 - np.exp(-1.0), 1 - np.exp(-2.0)], atol=1e-6)

    def test_zero_delta_weight_gives_log_two(self):
        p = s6_params64(3, 2, w_delta=np.zeros((3, 3)), b_delta=np.zeros(3))
        delta, bmat, cmat = project(t64(np.random.default_rng(0).normal(size=(1, 4, 3))), p)
        assert_allclose(delta.data, np.log(2.0), rtol=1e-15)
        self.assertEqual(bmat.shape, (1, 4, 2))
        self.assertEqual(cmat.shape, (1, 4, 2))

    def test_zero_input_coupling_leaves_skip_path(self):
        p = s6_params64(3, 2, w_b=np.zeros((2, 3)), b_b=np.zeros(2), d_skip=[0.5, -1.0, 2.0])
        x = t64(np.random.default_rng(1).normal(size=(2, 5, 3)))
        assert_allclose(selective_scan(x, p).data, x.data * [0.5, -1.0, 2.0], atol=1e-15)

    def test_zeroed_readout_scales_input(self):
        p = s6_params64(2, 3, w_c=np.zeros((3, 2)), b_c=np.zeros(3), d_skip=[1.5, 1.5])
        x = t64(np.random.default_rng(2).normal(size=(1, 6, 2)))
        assert_array_equal(selective_scan(x, p).data, 1.5 * x.data)

    def test_matches_naive_recurrence_on_random_configs(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            b, length, d, n = rng.integers(1, 3), rng.integers(1, 33), rng.integers(1, 5), rng.integers(1, 5)
            p = s6_params64(int(d), int(n), seed=seed)
            x = rng.normal(size=(b, length, d))
            assert_allclose(selective_scan(t64(x), p).data, naive_selective_scan(x, p), atol=1e-6)

    def test_causality(self):
        p = s6_params64(3, 4, seed=5)
        x = np.random.default_rng(5).normal(size=(1, 10, 3))
        bumped = x.copy()
        bumped[0, 7] += 1.0
        y0 = selective_scan(t64(x), p).data
        y1 = selective_scan(t64(bumped), p).data
        assert_array_equal(y0[0, :7], y1[0, :7])
        self.assertFalse(np.allclose(y0[0, 7:], y1[0, 7:]))

    def test_hidden_state_stays_within_geometric_bound(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            d, n, length = int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 40))
            p = s6_params64(d, n, seed=seed)
            x = rng.uniform(-3.0, 3.0, size=(1, length, d))
            delta, bmat, _ = project(t64(x), p)
            a = -np.exp(p.log_neg_a.data)
            abar, bbar = discretize(delta.data[..., None], a[None, None], bmat.data[:, :, None, :])
            u = bbar * x[..., None]
            bound = np.abs(u).max() / (1.0 - abar.max())
            for k in range(n):
                readout = np.zeros((1, length, n))
                readout[..., k] = 1.0
                h = linear_recurrence(t64(abar), t64(u), t64(readout)).data
                self.assertTrue(np.all(np.abs(h) <= bound * (1 + 1e-9)), f"seed {seed}, state {k}")

    def test_linear_in_x_when_projections_are_constant(self):
        p = s6_params64(
            2, 2, w_delta=np.zeros((2, 2)), w_b=np.zeros((2, 2)), w_c=np.zeros((2, 2)),
            b_b=[0.3, -0.7], b_c=[1.0, 0.5],
        )
        x = t64(np.random.default_rng(6).normal(size=(1, 8, 2)))
        assert_allclose(selective_scan(3.0 * x, p).data, 3.0 * selective_scan(x, p).data, atol=1e-12)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            selective_scan(t64(np.zeros((1, 4, 5))), s6_params64(3, 2))

    def test_parameter_count_formula(self):
        self.assertEqual(default_params(6, 4).parameter_count(), S6Params.count(6, 4))

    def test_block_gradients(self):
        p = s6_params64(3, 2, seed=7)
        x = t64(np.random.default_rng(7).normal(size=(2, 6, 3)))
        report = grad_check(lambda *_: weighted_sum(selective_scan(x, p)), [x] + p.parameters())
        self.assertTrue(report.passed, report)


# ---------------------------------------------------------------------
# SEM
# ---------------------------------------------------------------------
class SemConfigTests(SimpleTestCase):
    def test_validation(self):
        with self.assertRaises(ConfigError):
            SemConfig(channels=6, attention_groups=4)
        with self.assertRaises(ConfigError):
            SemConfig(channels=4, directions=[])
        cfg = SemConfig(channels=8, directions="tl_br,spiral_in")
        self.assertEqual(cfg.directions, (ScanDirection.TL_BR, ScanDirection.SPIRAL_IN))


class SemExtractTests(SimpleTestCase):
    def setUp(self):
        self.x = t64(np.random.default_rng(0).normal(size=(2, 4, 3, 5)))

    def test_single_skip_only_direction_is_identity(self):
        cfg = SemConfig(channels=4, n_state=2, directions=("spiral_in",), attention_groups=2)
        params = sem_params64(cfg)
        params.s6 = skip_only(4, 2)
        assert_array_equal(sem_extract(self.x, cfg, params).data, self.x.data)

    def test_two_skip_only_directions_double(self):
        cfg = SemConfig(channels=4, n_state=2, directions=("tl_br", "br_tl"), attention_groups=2)
        params = sem_params64(cfg)
        params.s6 = skip_only(4, 2)
        assert_array_equal(sem_extract(self.x, cfg, params).data, 2.0 * self.x.data)

    def test_stacked_directions_match_separate_scans(self):
        cfg = SemConfig(channels=4, n_state=2, attention_groups=2)
        params = sem_params64(cfg, seed=3)
        separate = [fold(selective_scan(unfold(self.x, d), params.s6), d, 3, 5) for d in cfg.directions]
        assert_allclose(sem_extract(self.x, cfg, params).data, rmerge(separate).data, atol=1e-12)

    def test_spiral_branch_is_causal(self):
        cfg = SemConfig(channels=4, n_state=2, directions=("spiral_in",), attention_groups=2)
        params = sem_params64(cfg, seed=4)
        order = permutation_for("spiral_in", 3, 5).order
        bumped = self.x.numpy()
        r, c = divmod(int(order[-1]), 5)
        bumped[:, :, r, c] = 0.0
        y0 = unfold(sem_extract(self.x, cfg, params), "spiral_in").data
        y1 = unfold(sem_extract(t64(bumped), cfg, params), "spiral_in").data
        assert_allclose(y0[:, :-1], y1[:, :-1], atol=1e-12)


class MultiscaleAttentionTests(SimpleTestCase):
    def zeroed(self, cfg):
        params = sem_params64(cfg)
        for name in ("w1", "b1", "w3", "b3"):
            setattr(params, name, t64(np.zeros(getattr(params, name).shape)))
        return params

    def test_zero_convolutions_halve_the_input(self):
        cfg = SemConfig(channels=4, n_state=2, attention_groups=2)
        x = t64(np.random.default_rng(1).normal(size=(1, 4, 4, 4)))
        assert_allclose(multiscale_attention(x, self.zeroed(cfg), 2).data, 0.5 * x.data, rtol=1e-15)

    def test_gate_never_amplifies(self):
        cfg = SemConfig(channels=8, n_state=2, attention_groups=4)
        x = t64(np.random.default_rng(2).normal(size=(2, 8, 5, 3)))
        y = multiscale_attention(x, sem_params64(cfg), 4)
        self.assertEqual(y.shape, x.shape)
        self.assertTrue(np.all(np.abs(y.data) <= np.abs(x.data)))

    def test_group_mismatch(self):
        cfg = SemConfig(channels=4, n_state=2, attention_groups=2)
        with self.assertRaises(ConfigError):
            multiscale_attention(t64(np.zeros((1, 6, 2, 2))), sem_params64(cfg), 4)

    def test_skip_only_with_zero_convolutions(self):
        cfg = SemConfig(channels=4, n_state=2, directions=("tl_br",), attention_groups=2)
        params = self.zeroed(cfg)
        params.s6 = skip_only(4, 2)
        x = t64(np.random.default_rng(3).normal(size=(1, 4, 6, 2)))
        y = sem_forward(x, cfg, params)
        assert_allclose(y.data, 0.5 * x.data, rtol=1e-15)
        assert_array_equal(sem_forward(x, cfg, params).data, y.data)


class SemGradientTests(SimpleTestCase):
    def test_parameter_count(self):
        cfg = SemConfig(channels=8, n_state=3, attention_groups=4)
        self.assertEqual(sem_params64(cfg).parameter_count(), SemParams.count(cfg))

    def test_full_block_gradients(self):
        cfg = SemConfig(channels=4, n_state=2, directions=("tl_br", "spiral_in"), attention_groups=2)
        params = sem_params64(cfg, seed=9)
        x = t64(np.random.default_rng(9).normal(size=(1, 4, 3, 3)))
        report = grad_check(
            lambda *_: weighted_sum(sem_forward(x, cfg, params)), [x] + params.parameters(),
            max_coords=12,
        )
        self.assertTrue(report.passed, report)
