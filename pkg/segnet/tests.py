# segnet/tests.py
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

import numpy as np
from django.core.management import CommandError, call_command
from django.test import SimpleTestCase, override_settings
from numpy.testing import assert_array_equal

from kmunet.cli import EXIT_IO, EXIT_VALIDATION, EXIT_VERIFICATION
from numerics.exceptions import CheckpointError, ConfigError, DimensionError
from numerics.gradcheck import GradCheckReport
from numerics.tensor import Tape, Tensor
from ssm.scan import STANDARD_DIRECTIONS
from training.losses import bce_dice_loss

from .benchmark import run_benchmark, time_selective_scan
from .checkpoint import MAGIC, load_checkpoint, read_checkpoint, save_checkpoint
from .config import DIVISOR, MODEL_KEYS, ModelConfig, model_config_pairs
from .model import build, count_parameters, estimate_macs
from .serializers import ModelConfigSerializer
from .verification import SUITES, run_suites


# ---------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------
def tiny_config(**overrides):
    values = dict(conv_channels=(4, 4, 8), token_dims=(8, 8), n_state=2, sem_attention_groups=2)
    values.update(overrides)
    return ModelConfig(**values)


def image(b, h, w, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(size=(b, 3, h, w)))


def failing_suite(seed):
    return [("broken.op", GradCheckReport(max_rel_error=0.5, tol=1e-5, checked=1))]


def passing_suite(seed):
    return [("fine.op", GradCheckReport(max_rel_error=1e-9, tol=1e-5, checked=4))]


# ---------------------------------------------------------------------
# Config and serializers
# ---------------------------------------------------------------------
class ModelConfigTests(SimpleTestCase):
    def test_defaults(self):
        cfg = ModelConfig()
        self.assertEqual(cfg.conv_channels, (8, 16, 32))
        self.assertEqual(cfg.token_dims, (64, 128))
        self.assertEqual(cfg.sem_directions, STANDARD_DIRECTIONS)

    def test_wrong_number_of_widths(self):
        with self.assertRaises(ConfigError):
            ModelConfig(conv_channels=(8, 16))

    def test_unknown_mixer(self):
        with self.assertRaises(ConfigError):
            ModelConfig(token_mixer="conv")

    def test_widths_must_split_into_attention_groups(self):
        with self.assertRaises(ConfigError):
            ModelConfig(conv_channels=(6, 8, 8), sem_attention_groups=4)
        ModelConfig(conv_channels=(6, 8, 8), sem_attention_groups=4, sem_enabled=False)

    def test_pairs_use_dotted_sem_keys(self):
        keys = [k for k, _ in model_config_pairs(ModelConfig())]
        self.assertIn("sem.directions", keys)
        self.assertEqual(tuple(keys), MODEL_KEYS)


class ModelConfigSerializerTests(SimpleTestCase):
    def test_text_values_are_cast(self):
        serializer = ModelConfigSerializer(data={
            "conv_channels": "4, 8, 16",
            "token_dims": "32,64",
            "sem.directions": "tl_br,spiral_in",
            "sem.enabled": "true",
            "kan_range": "1.5",
        })
        self.assertTrue(serializer.is_valid(), serializer.errors)
        cfg = serializer.save()
        self.assertEqual(cfg.conv_channels, (4, 8, 16))
        self.assertEqual(cfg.token_dims, (32, 64))
        self.assertEqual(len(cfg.sem_directions), 2)
        self.assertEqual(cfg.kan_range, 1.5)

    def test_unknown_key_is_named(self):
        serializer = ModelConfigSerializer(data={"conv_chanels": "4,8,16"})
        self.assertFalse(serializer.is_valid())
        self.assertIn("conv_chanels", serializer.errors)

    def test_undotted_sem_key_is_unknown(self):
        serializer = ModelConfigSerializer(data={"sem_directions": "tl_br"})
        self.assertFalse(serializer.is_valid())
        self.assertIn("sem_directions", serializer.errors)

    def test_bad_direction(self):
        serializer = ModelConfigSerializer(data={"sem.directions": "tl_br,diagonal"})
        self.assertFalse(serializer.is_valid())
        self.assertIn("sem_directions", serializer.errors)

    def test_attention_group_mismatch(self):
        serializer = ModelConfigSerializer(data={"conv_channels": "6,8,8"})
        self.assertFalse(serializer.is_valid())
        self.assertIn("sem.attention_groups", serializer.errors)

    def test_non_positive_range(self):
        serializer = ModelConfigSerializer(data={"kan_range": "0"})
        self.assertFalse(serializer.is_valid())
        self.assertIn("kan_range", serializer.errors)

    @override_settings(KM_DEFAULT_DIRECTIONS=["spiral_in"])
    def test_directions_default_from_settings(self):
        serializer = ModelConfigSerializer(data={})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(len(serializer.save().sem_directions), 1)

    def test_blank_mlp_hidden_means_none(self):
        serializer = ModelConfigSerializer(data={"mlp_hidden": "  "})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertIsNone(serializer.save().mlp_hidden)


# ---------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------
class KmUnetShapeTests(SimpleTestCase):
    def test_output_matches_input_spatially(self):
        model = build(tiny_config(), seed=0)
        for b, h, w in ((1, 64, 64), (2, 96, 64), (1, 128, 128)):
            with self.subTest(size=(h, w)):
                out = model(image(b, h, w))
                self.assertEqual(out.shape, (b, 1, h, w))
                self.assertTrue(np.all(np.isfinite(out.data)))

    def test_reference_tiny_config_runs(self):
        model = build(tiny_config(conv_channels=(4, 8, 16), token_dims=(32, 64)), seed=1)
        self.assertEqual(model(image(1, 64, 64)).shape, (1, 1, 64, 64))

    def test_stage_activations(self):
        model = build(tiny_config(), seed=0)
        acts = model.stage_activations(image(1, 64, 64))
        self.assertEqual(len(acts), 6)
        sides = [a.shape[2] for a in acts]
        self.assertEqual(sides, [32, 16, 8, 4, 2, 2])
        self.assertEqual(acts[-1].shape[2:], (64 // DIVISOR, 64 // DIVISOR))
        self.assertEqual([a.shape[1] for a in acts], [4, 4, 8, 8, 8, 8])

    def test_indivisible_input(self):
        model = build(tiny_config(), seed=0)
        with self.assertRaisesMessage(DimensionError, "divisible by 32"):
            model(image(1, 48, 64))

    def test_wrong_channel_count(self):
        model = build(tiny_config(), seed=0)
        with self.assertRaises(DimensionError):
            model(Tensor(np.zeros((1, 1, 32, 32))))

    def test_forward_is_deterministic(self):
        x = image(1, 32, 64, seed=5)
        a = build(tiny_config(), seed=3)(x).data
        b = build(tiny_config(), seed=3)(x).data
        assert_array_equal(a, b)

    def test_seed_changes_weights(self):
        x = image(1, 32, 32)
        self.assertFalse(np.array_equal(build(tiny_config(), 1)(x).data, build(tiny_config(), 2)(x).data))

    def test_mlp_mixer_and_no_sem_variants(self):
        for cfg in (tiny_config(token_mixer="mlp"), tiny_config(sem_enabled=False)):
            with self.subTest(cfg=cfg):
                self.assertEqual(build(cfg, 0)(image(1, 32, 32)).shape, (1, 1, 32, 32))

    def test_every_parameter_gets_a_gradient(self):
        model = build(tiny_config(), seed=0)
        target = (np.random.default_rng(1).uniform(size=(1, 1, 32, 32)) > 0.5).astype(np.float32)
        with Tape() as tape:
            loss = bce_dice_loss(model(image(1, 32, 32)), target)
        tape.backward(loss)
        total = 0.0
        for name, p in model.named_parameters():
            self.assertIsNotNone(p.grad, name)
            self.assertEqual(p.grad.shape, p.shape, name)
            self.assertTrue(np.all(np.isfinite(p.grad)), name)
            total += float(np.abs(p.grad).sum())
        self.assertGreater(total, 0.0)


class ParameterCountTests(SimpleTestCase):
    def test_closed_form_matches_module_tree(self):
        configs = (
            tiny_config(),
            tiny_config(token_mixer="mlp", mlp_hidden=12),
            tiny_config(sem_enabled=False),
            tiny_config(kan_layers=2, kan_grid=4, kan_order=2),
            ModelConfig(),
        )
        for cfg in configs:
            with self.subTest(cfg=cfg):
                self.assertEqual(count_parameters(cfg), build(cfg, 0).parameter_count())

    def test_names_are_stable_and_unique(self):
        names = [n for n, _ in build(tiny_config(), 0).named_parameters()]
        self.assertEqual(len(names), len(set(names)))
        self.assertEqual(names, [n for n, _ in build(tiny_config(), 9).named_parameters()])
        self.assertEqual(names[0], "stem.weight")

    def test_mac_estimate_grows_with_resolution(self):
        cfg = tiny_config()
        small, large = estimate_macs(cfg, 64, 64), estimate_macs(cfg, 128, 128)
        self.assertGreater(small, 0)
        self.assertGreater(large, 3 * small)


# ---------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------
class CheckpointTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_restores_outputs(self):
        cfg = tiny_config(token_mixer="mlp", sem_directions=("tl_br", "spiral_in"))
        model = build(cfg, seed=4)
        path = save_checkpoint(self.dir / "m.ckpt", model)
        restored = load_checkpoint(path)
        self.assertEqual(restored.cfg, cfg)
        x = image(1, 32, 32)
        assert_array_equal(model(x).data, restored(x).data)

    def test_header_layout(self):
        path = save_checkpoint(self.dir / "m.ckpt", build(tiny_config(), 0))
        raw = path.read_bytes()
        self.assertEqual(raw[:4], MAGIC)
        self.assertEqual(int.from_bytes(raw[4:8], "little"), 1)
        pairs, tensors = read_checkpoint(path)
        self.assertEqual(pairs["conv_channels"], "4,4,8")
        self.assertEqual(tensors["stem.weight"].shape, (4, 3, 3, 3))
        self.assertEqual(tensors["stem.weight"].dtype, np.float32)

    def test_bad_magic(self):
        path = self.dir / "bad.ckpt"
        path.write_bytes(b"NOPE" + bytes(16))
        with self.assertRaisesMessage(CheckpointError, "bad magic"):
            read_checkpoint(path)

    def test_truncated_file(self):
        path = save_checkpoint(self.dir / "m.ckpt", build(tiny_config(), 0))
        cut = self.dir / "cut.ckpt"
        cut.write_bytes(path.read_bytes()[:-10])
        with self.assertRaises(CheckpointError):
            read_checkpoint(cut)

    def test_missing_file_is_an_io_error(self):
        with self.assertRaises(OSError):
            load_checkpoint(self.dir / "absent.ckpt")

    def test_bad_checkpoint_exits_with_io_code(self):
        path = self.dir / "bad.ckpt"
        path.write_bytes(b"XXXX")
        with self.assertRaises(CommandError) as ctx:
            call_command("infer", ckpt=str(path), image="unused.ppm", out=str(self.dir / "m.pgm"))
        self.assertEqual(ctx.exception.returncode, EXIT_IO)


# ---------------------------------------------------------------------
# gradcheck / bench
# ---------------------------------------------------------------------
class GradcheckCommandTests(SimpleTestCase):
    def test_real_suite_passes(self):
        out = StringIO()
        call_command("gradcheck", module="numerics", seed=0, stdout=out)
        self.assertIn("numerics: worst relative error", out.getvalue())

    def test_suites_report_every_row(self):
        (result,) = run_suites("kan", seed=1)
        self.assertTrue(result.passed, result.worst)
        self.assertEqual(len(result.rows), 3)

    def test_failure_exits_with_verification_code(self):
        out = StringIO()
        with mock.patch.dict(SUITES, {"numerics": failing_suite}):
            with self.assertRaises(CommandError) as ctx:
                call_command("gradcheck", module="numerics", stdout=out)
        self.assertEqual(ctx.exception.returncode, EXIT_VERIFICATION)
        self.assertIn("broken.op", out.getvalue())

    def test_all_runs_every_module(self):
        out = StringIO()
        patched = {name: passing_suite for name in SUITES}
        with mock.patch.dict(SUITES, patched):
            call_command("gradcheck", stdout=out)
        for name in SUITES:
            self.assertIn(f"{name}: worst relative error", out.getvalue())

    def test_unknown_module(self):
        with self.assertRaises(CommandError) as ctx:
            call_command("gradcheck", module="optics", stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, EXIT_VALIDATION)


class BenchTests(SimpleTestCase):
    def test_timings_per_length(self):
        timings = time_selective_scan([8, 16], d_model=2, n_state=2, repeats=1)
        self.assertEqual([t.length for t in timings], [8, 16])
        self.assertTrue(all(t.seconds >= 0 for t in timings))

    def test_unknown_op(self):
        with self.assertRaises(ConfigError):
            run_benchmark("conv", [8])

    def test_command_reports_cost(self):
        out = StringIO()
        call_command("bench", sizes="16,32", repeats=1, stdout=out)
        text = out.getvalue()
        self.assertIn("selective_scan L=32", text)
        self.assertIn("ratio vs L=16", text)
        self.assertIn(f"model parameters: {count_parameters(ModelConfig()):,}", text)

    def test_command_rejects_bad_sizes(self):
        with self.assertRaises(CommandError) as ctx:
            call_command("bench", sizes="16,abc", stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, EXIT_VALIDATION)
