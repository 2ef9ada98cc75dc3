# training/tests.py
import csv
import math
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import CommandError, call_command
from django.test import SimpleTestCase, override_settings
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from rest_framework.exceptions import ValidationError

from kmunet.cli import EXIT_IO, EXIT_VALIDATION
from numerics.exceptions import ConfigError, ContractError, DimensionError, NumericsError
from numerics.gradcheck import grad_check
from numerics.tensor import Tensor, precision
from segdata.dataset import save_dataset
from segdata.pnm import read_pnm, write_pnm
from segdata.synthetic import gen_synthetic
from segnet.checkpoint import load_checkpoint
from segnet.config import MODEL_KEYS, ModelConfig
from segnet.model import build

from .loops import HISTORY_FIELDS, activation_maps, evaluate, predict_mask, train_loop
from .losses import bce_dice_loss, bce_term, dice_term
from .metrics import f1_dice, iou, threshold_logits
from .optim import Adam, AdamState, adam_step, constant_lr, cosine_lr, learning_rate
from .runconfig import (
    TRAIN_KEYS, TrainConfig, load_run_config, parse_config_text, parse_overrides,
)


# ---------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------
MICRO = dict(conv_channels=(4, 4, 4), token_dims=(8, 8), n_state=2, sem_attention_groups=2)

MICRO_TEXT = """\
# smallest complete network
conv_channels = 4,4,4
token_dims = 8,8
n_state = 2
sem.attention_groups = 2
"""


def t64(values):
    return Tensor(values, dtype=np.float64)


def micro_model(seed=0):
    return build(ModelConfig(**MICRO), seed)


def train_config(**overrides):
    values = dict(batch_size=2, lr_max=5e-3, lr_min=5e-3, lr_schedule="constant", epochs=2, augment=False)
    values.update(overrides)
    return TrainConfig(**values)


def read_history(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


class TempDirMixin:
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()


# ---------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------
class LossTests(SimpleTestCase):
    def test_zero_logits_bce_is_ln2(self):
        for target in (np.zeros((1, 1, 2, 2)), np.ones((1, 1, 2, 2))):
            with self.subTest(target=target.mean()):
                assert_allclose(bce_term(t64(np.zeros((1, 1, 2, 2))), t64(target)).item(), math.log(2.0), rtol=1e-12)

    def test_perfect_prediction(self):
        target = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
        logits = t64(np.where(target == 1, 40.0, -40.0))
        self.assertLess(bce_dice_loss(logits, target).item(), 1e-9)

    def test_hand_counted_dice(self):
        logits = t64(np.full((1, 1, 1, 4), 50.0))
        target = t64([[[[1.0, 1.0, 0.0, 0.0]]]])
        assert_allclose(dice_term(logits, target).item(), 1.0 / 3.0, atol=1e-6)

    def test_weights(self):
        logits = t64(np.random.default_rng(0).normal(size=(2, 1, 3, 3)))
        target = t64((np.random.default_rng(1).uniform(size=(2, 1, 3, 3)) > 0.5).astype(float))
        bce, dice = bce_term(logits, target).item(), dice_term(logits, target).item()
        assert_allclose(bce_dice_loss(logits, target, 2.0, 0.5).item(), 2.0 * bce + 0.5 * dice, rtol=1e-12)

    def test_non_binary_target(self):
        with self.assertRaises(ContractError):
            bce_dice_loss(t64(np.zeros((1, 1, 2, 2))), np.full((1, 1, 2, 2), 0.3))

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            bce_dice_loss(t64(np.zeros((1, 1, 2, 2))), np.zeros((1, 1, 2, 3)))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**16), scale=st.floats(0.1, 20.0))
    def test_never_negative(self, seed, scale):
        rng = np.random.default_rng(seed)
        logits = t64(rng.normal(0.0, scale, size=(2, 1, 4, 4)))
        target = (rng.uniform(size=(2, 1, 4, 4)) > 0.5).astype(np.float64)
        self.assertGreaterEqual(bce_dice_loss(logits, target).item(), 0.0)

    def test_gradient(self):
        rng = np.random.default_rng(3)
        logits = t64(rng.normal(size=(2, 1, 3, 3)))
        target = t64((rng.uniform(size=(2, 1, 3, 3)) > 0.5).astype(float))
        report = grad_check(lambda l: bce_dice_loss(l, target), logits)
        self.assertTrue(report.passed, report)


# ---------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------
class MetricTests(SimpleTestCase):
    def test_identical(self):
        m = np.array([[1, 0], [1, 1]])
        self.assertEqual((iou(m, m), f1_dice(m, m)), (1.0, 1.0))

    def test_hand_counted_overlap(self):
        p = np.array([1, 1, 1, 1, 0, 0, 0, 0])
        g = np.array([0, 0, 1, 1, 1, 1, 0, 0])
        self.assertAlmostEqual(iou(p, g), 1.0 / 3.0)
        self.assertAlmostEqual(f1_dice(p, g), 0.5)

    def test_disjoint(self):
        p, g = np.array([1, 0]), np.array([0, 1])
        self.assertEqual((iou(p, g), f1_dice(p, g)), (0.0, 0.0))

    def test_both_empty(self):
        z = np.zeros((3, 3))
        self.assertEqual((iou(z, z), f1_dice(z, z)), (1.0, 1.0))

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            iou(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_non_binary(self):
        with self.assertRaises(ContractError):
            f1_dice(np.array([0, 2]), np.array([0, 1]))

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**16), density=st.floats(0.0, 1.0))
    def test_f1_is_a_function_of_iou(self, seed, density):
        rng = np.random.default_rng(seed)
        p = rng.uniform(size=(6, 6)) < density
        g = rng.uniform(size=(6, 6)) < 0.5
        j = iou(p, g)
        self.assertAlmostEqual(f1_dice(p, g), 2 * j / (1 + j), places=12)

    def test_threshold_in_logit_space(self):
        logits = np.array([-1.0, 0.0, 1e-9, 1.0, 2.0])
        assert_array_equal(threshold_logits(logits), [False, False, True, True, True])
        assert_array_equal(threshold_logits(logits, 0.8), [False, False, False, False, True])
        with self.assertRaises(ContractError):
            threshold_logits(logits, 1.0)


# ---------------------------------------------------------------------
# Schedules and Adam
# ---------------------------------------------------------------------
class ScheduleTests(SimpleTestCase):
    cfg = TrainConfig(lr_max=1e-4, lr_min=1e-5, epochs=300)

    def test_endpoints(self):
        self.assertAlmostEqual(cosine_lr(0, self.cfg), 1e-4, delta=1e-12)
        self.assertAlmostEqual(cosine_lr(300, self.cfg), 1e-5, delta=1e-12)

    def test_midpoint(self):
        self.assertAlmostEqual(cosine_lr(150, self.cfg), 5.5e-5, delta=1e-12)

    def test_nonincreasing(self):
        rates = [cosine_lr(t, self.cfg) for t in range(301)]
        self.assertTrue(all(a >= b for a, b in zip(rates, rates[1:])))

    def test_out_of_range(self):
        for t in (-1, 301):
            with self.subTest(t=t):
                with self.assertRaises(ContractError):
                    cosine_lr(t, self.cfg)

    def test_constant_and_dispatch(self):
        cfg = TrainConfig(lr_max=1e-3, lr_min=1e-5, epochs=10, lr_schedule="constant")
        self.assertEqual(constant_lr(7, cfg), 1e-3)
        self.assertEqual(learning_rate(7, cfg), 1e-3)
        self.assertEqual(learning_rate(0, self.cfg), cosine_lr(0, self.cfg))

    def test_config_invariants(self):
        with self.assertRaises(ConfigError):
            TrainConfig(lr_max=1e-5, lr_min=1e-4)
        with self.assertRaises(ConfigError):
            TrainConfig(epochs=0)


class AdamTests(SimpleTestCase):
    def test_zero_gradient_leaves_parameters(self):
        params = {"w": np.array([1.0, -2.0])}
        out = adam_step(params, {"w": np.zeros(2)}, AdamState(), lr=0.1)
        assert_array_equal(out["w"], params["w"])

    def test_first_step_is_sign_sized(self):
        g = np.array([3.0, -0.5, 1e-3])
        out = adam_step({"w": np.zeros(3)}, {"w": g}, AdamState(), lr=0.01)
        assert_allclose(out["w"], -0.01 * np.sign(g), rtol=1e-4)

    def test_nan_gradient_names_parameter(self):
        with self.assertRaisesMessage(NumericsError, "encoder.0.weight"):
            adam_step({"encoder.0.weight": np.zeros(2)}, {"encoder.0.weight": np.array([0.0, np.nan])}, AdamState(), 0.1)

    def test_missing_gradient_is_skipped(self):
        state = AdamState()
        out = adam_step({"a": np.ones(2), "b": np.ones(2)}, {"a": np.ones(2), "b": None}, state, 0.1)
        assert_array_equal(out["b"], np.ones(2))
        self.assertNotIn("b", state.m)

    def test_trajectories_are_reproducible(self):
        def run():
            state, params = AdamState(), {"w": np.array([0.5, -0.5])}
            for _ in range(20):
                params = adam_step(params, {"w": 2 * params["w"] - 0.1}, state, 0.05)
            return params["w"]

        assert_array_equal(run(), run())

    def test_optimizer_rebinds_data(self):
        model = micro_model()
        name, param = next(iter(model.named_parameters()))
        before = param.data
        snapshot = before.copy()
        param.grad = np.ones_like(before)
        Adam([(name, param)]).step(1e-2)
        assert_array_equal(before, snapshot)
        self.assertIsNot(param.data, before)
        self.assertEqual(param.data.dtype, np.float32)
        assert_allclose(param.data, snapshot - 1e-2, atol=1e-6)


# ---------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------
class RunConfigTests(TempDirMixin, SimpleTestCase):
    def test_parse_text(self):
        values = parse_config_text("a = 1\n\n# note\nsem.directions = tl_br, spiral_in  # trailing\n")
        self.assertEqual(values, {"a": "1", "sem.directions": "tl_br, spiral_in"})

    def test_malformed_line(self):
        with self.assertRaisesMessage(ConfigError, ":2:"):
            parse_config_text("a = 1\njust words\n")

    def test_duplicate_key(self):
        with self.assertRaises(ConfigError):
            parse_config_text("a = 1\na = 2\n")

    def test_overrides(self):
        self.assertEqual(parse_overrides(["epochs=3", " lr_max = 0.01"]), {"epochs": "3", "lr_max": "0.01"})
        with self.assertRaises(ConfigError):
            parse_overrides(["epochs"])

    def test_file_then_overrides(self):
        path = self.dir / "run.cfg"
        path.write_text(MICRO_TEXT + "epochs = 5\ntoken_mixer = mlp\n")
        run = load_run_config(path, ["epochs=7", "image_size=64x32"])
        self.assertEqual(run.model.conv_channels, (4, 4, 4))
        self.assertEqual(run.model.token_mixer, "mlp")
        self.assertEqual(run.train.epochs, 7)
        self.assertEqual(run.image_size, (64, 32))

    def test_defaults(self):
        run = load_run_config()
        self.assertEqual(run.model, ModelConfig())
        self.assertEqual(run.train.batch_size, 8)
        self.assertEqual(run.train.lr_max, 1e-4)
        self.assertEqual(run.train.epochs, 300)
        self.assertIsNone(run.image_size)

    @override_settings(KM_SEED=42)
    def test_seed_falls_back_to_settings(self):
        self.assertEqual(load_run_config().train.seed, 42)
        self.assertEqual(load_run_config(overrides=["seed=3"]).train.seed, 3)

    def test_unknown_keys_are_named(self):
        with self.assertRaises(ValidationError) as ctx:
            load_run_config(overrides=["learning_rate=0.1", "epochs=2"])
        self.assertIn("learning_rate", ctx.exception.detail)

    def test_errors_from_every_section(self):
        with self.assertRaises(ValidationError) as ctx:
            load_run_config(overrides=["lr_min=1", "lr_max=0.1", "image_size=48x64", "n_state=0"])
        detail = ctx.exception.detail
        for key in ("lr_min", "image_size", "n_state"):
            self.assertIn(key, detail)

    def test_val_ratio_bounds(self):
        with self.assertRaises(ValidationError):
            load_run_config(overrides=["val_ratio=1"])
        self.assertEqual(load_run_config(overrides=["val_ratio=0"]).train.val_ratio, 0.0)

    def test_pairs_cover_every_key(self):
        keys = [k for k, _ in load_run_config(overrides=["image_size=32x32"]).pairs()]
        self.assertEqual(len(keys), len(MODEL_KEYS) + len(TRAIN_KEYS) + 3)
        self.assertIn("image_size", keys)

    def test_missing_file(self):
        with self.assertRaises(OSError):
            load_run_config(self.dir / "absent.cfg")


# ---------------------------------------------------------------------
# Loops
# ---------------------------------------------------------------------
class LoopTests(TempDirMixin, SimpleTestCase):
    samples = gen_synthetic(4, 32, 32, seed=3)

    def test_history_and_checkpoints(self):
        result = train_loop(micro_model(), self.samples[:2], self.samples[2:], train_config(), self.dir)
        self.assertEqual(len(result.history), 2)
        rows = read_history(self.dir / "history.csv")
        self.assertEqual(tuple(rows[0]), HISTORY_FIELDS)
        self.assertEqual([r[0] for r in rows[1:]], ["0", "1"])
        self.assertTrue(result.best_path.exists())
        self.assertTrue(result.final_path.exists())
        self.assertEqual(load_checkpoint(result.best_path).cfg, ModelConfig(**MICRO))

    def test_final_checkpoint_holds_trained_weights(self):
        model = micro_model()
        result = train_loop(model, self.samples, [], train_config(epochs=1), self.dir)
        x = Tensor(self.samples[0].image[None])
        assert_array_equal(load_checkpoint(result.final_path)(x).data, model(x).data)

    def test_empty_training_set(self):
        with self.assertRaises(ConfigError):
            train_loop(micro_model(), [], [], train_config(), self.dir)

    def test_runs_are_reproducible(self):
        cfg = train_config(augment=True, seed=5)
        a = train_loop(micro_model(1), self.samples, [], cfg, self.dir / "a").history
        b = train_loop(micro_model(1), self.samples, [], cfg, self.dir / "b").history
        self.assertEqual(a, b)

    def test_loss_decreases(self):
        cfg = train_config(epochs=12, batch_size=4, lr_max=1e-2, lr_min=1e-3, lr_schedule="cosine")
        history = train_loop(micro_model(2), self.samples, [], cfg, self.dir).history
        self.assertLess(history[-1].train_loss, history[0].train_loss)

    def test_training_does_not_lower_train_iou(self):
        model = micro_model(2)
        before = evaluate(model, self.samples).mean_iou
        cfg = train_config(epochs=24, batch_size=4, lr_max=1e-2, lr_min=1e-3, lr_schedule="cosine")
        result = train_loop(model, self.samples, [], cfg, self.dir)
        after = evaluate(model, self.samples).mean_iou
        self.assertGreaterEqual(after, before)
        self.assertGreaterEqual(result.best_val_iou, before)
        best = evaluate(load_checkpoint(result.best_path), self.samples, batch_size=cfg.batch_size)
        self.assertAlmostEqual(best.mean_iou, result.best_val_iou)

    def test_evaluate_reports_each_sample(self):
        report = evaluate(micro_model(), self.samples, batch_size=3)
        self.assertEqual([r[0] for r in report.rows], [s.id for s in self.samples])
        for _, j, f in report.rows:
            self.assertTrue(0.0 <= j <= f <= 1.0)
        with self.assertRaises(ConfigError):
            evaluate(micro_model(), [])

    def test_predict_mask(self):
        mask = predict_mask(micro_model(), self.samples[0].image)
        self.assertEqual(mask.shape, (32, 32))
        self.assertEqual(mask.dtype, np.uint8)
        self.assertTrue(set(np.unique(mask).tolist()) <= {0, 1})

    def test_activation_maps(self):
        maps = activation_maps(micro_model(), self.samples[0].image)
        self.assertEqual(len(maps), 6)
        self.assertEqual([m.shape for m in maps], [(16, 16), (8, 8), (4, 4), (2, 2), (1, 1), (1, 1)])
        self.assertTrue(all(m.dtype == np.uint8 for m in maps))
        self.assertEqual((maps[0].min(), maps[0].max()), (0, 255))
        assert_array_equal(maps[-1], np.zeros((1, 1)))

    def test_activation_maps_are_reproducible(self):
        model = micro_model(4)
        first = activation_maps(model, self.samples[1].image)
        second = activation_maps(model, self.samples[1].image)
        for a, b in zip(first, second):
            assert_array_equal(a, b)


# ---------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------
class CommandTests(TempDirMixin, SimpleTestCase):
    def setUp(self):
        super().setUp()
        self.data = self.dir / "data"
        save_dataset(gen_synthetic(4, 32, 32, seed=7), self.data)
        self.config = self.dir / "run.cfg"
        self.config.write_text(
            MICRO_TEXT
            + f"data_dir = {self.data}\noutput_dir = {self.dir / 'out'}\n"
            + "epochs = 2\nbatch_size = 2\nval_ratio = 0.5\nlr_max = 0.005\n"
        )

    def train(self, *overrides, runs=1):
        out = StringIO()
        call_command("train", config=str(self.config), runs=runs, overrides=list(overrides), stdout=out)
        return out.getvalue()

    def test_train_writes_outputs(self):
        text = self.train()
        self.assertIn("final train IoU", text)
        rows = read_history(self.dir / "out" / "history.csv")
        self.assertEqual(len(rows), 3)
        self.assertTrue((self.dir / "out" / "best.ckpt").exists())
        self.assertTrue((self.dir / "out" / "final.ckpt").exists())

    def test_train_several_runs(self):
        text = self.train("epochs=1", runs=2)
        self.assertIn("mean over 2 runs", text)
        self.assertIn("run 1 (seed 1)", text)
        for r in (0, 1):
            self.assertTrue((self.dir / "out" / f"run_{r}" / "final.ckpt").exists())

    def test_train_unknown_override(self):
        with self.assertRaises(CommandError) as ctx:
            self.train("epoch=3")
        self.assertEqual(ctx.exception.returncode, EXIT_VALIDATION)
        self.assertIn("epoch", str(ctx.exception))

    def test_train_missing_config(self):
        with self.assertRaises(CommandError) as ctx:
            call_command("train", config=str(self.dir / "absent.cfg"), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, EXIT_IO)

    def test_eval_infer_explain(self):
        self.train()
        ckpt = str(self.dir / "out" / "final.ckpt")

        out = StringIO()
        call_command("eval", ckpt=ckpt, data=str(self.data), stdout=out)
        text = out.getvalue()
        self.assertIn("sample_0003: IoU", text)
        self.assertIn("mean IoU", text)

        image = str(self.data / "images" / "sample_0000.ppm")
        mask_path = self.dir / "pred.pgm"
        call_command("infer", ckpt=ckpt, image=image, out=str(mask_path), stdout=StringIO())
        self.assertEqual(mask_path.read_bytes()[:2], b"P5")
        mask = read_pnm(mask_path)
        self.assertEqual(mask.shape, (32, 32))
        self.assertTrue(set(np.unique(mask).tolist()) <= {0, 255})

        call_command("explain", ckpt=ckpt, image=image, out=str(self.dir / "maps"), stdout=StringIO())
        self.assertEqual(len(list((self.dir / "maps").glob("*.pgm"))), 6)
        self.assertTrue((self.dir / "maps" / "bottleneck.pgm").exists())

    def test_infer_indivisible_image(self):
        self.train("epochs=1")
        image = self.dir / "odd.ppm"
        write_pnm(image, np.zeros((48, 32, 3), dtype=np.uint8))
        with self.assertRaises(CommandError) as ctx:
            call_command(
                "infer", ckpt=str(self.dir / "out" / "final.ckpt"), image=str(image),
                out=str(self.dir / "m.pgm"), stdout=StringIO(),
            )
        self.assertEqual(ctx.exception.returncode, EXIT_VALIDATION)
        self.assertIn("divisible by 32", str(ctx.exception))

    def test_eval_missing_dataset(self):
        self.train("epochs=1")
        with self.assertRaises(CommandError) as ctx:
            call_command("eval", ckpt=str(self.dir / "out" / "final.ckpt"), data=str(self.dir / "none"), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, EXIT_IO)


class PrecisionIndependenceTests(SimpleTestCase):
    def test_loss_matches_in_both_precisions(self):
        rng = np.random.default_rng(0)
        logits, target = rng.normal(size=(1, 1, 4, 4)), (rng.uniform(size=(1, 1, 4, 4)) > 0.5).astype(float)
        with precision(np.float64):
            hi = bce_dice_loss(Tensor(logits), target).item()
        lo = bce_dice_loss(Tensor(logits), target).item()
        assert_allclose(lo, hi, rtol=1e-5)
