# segdata/tests.py
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import CommandError, call_command
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from kmunet.cli import EXIT_IO, EXIT_VALIDATION
from numerics.exceptions import ConfigError, ContractError, DimensionError, SampleIOError

from .augment import AUGMENTATIONS, SHAPE_PRESERVING, apply_augmentation, augment, available_augmentations
from .dataset import INDEX_FILE, load_dataset, sample_paths, save_dataset
from .pnm import load_image, load_pair, read_pnm, save_image, save_mask
from .samples import Sample, parse_size, split, stack_batch
from .synthetic import FOREGROUND_RANGE, gen_synthetic


# ---------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------
def make_sample(h=4, w=4, seed=0, sample_id="s"):
    rng = np.random.default_rng(seed)
    mask = (rng.uniform(size=(1, h, w)) > 0.5).astype(np.uint8)
    return Sample(id=sample_id, image=rng.uniform(size=(3, h, w)), mask=mask)


def write_raw(path, magic, w, h, pixels):
    path.write_bytes(f"{magic}\n{w} {h}\n255\n".encode("ascii") + bytes(pixels))
    return path


class TempDirMixin:
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()


# ---------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------
class SampleTests(SimpleTestCase):
    def test_arrays_are_cast_and_frozen(self):
        s = make_sample()
        self.assertEqual(s.image.dtype, np.float32)
        self.assertEqual(s.mask.dtype, np.uint8)
        self.assertFalse(s.image.flags.writeable)
        with self.assertRaises(ValueError):
            s.mask[0, 0, 0] = 1

    def test_non_binary_mask(self):
        with self.assertRaises(ContractError):
            Sample(id="x", image=np.zeros((3, 2, 2)), mask=np.full((1, 2, 2), 0.5))

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            Sample(id="x", image=np.zeros((3, 2, 2)), mask=np.zeros((1, 2, 3)))
        with self.assertRaises(DimensionError):
            Sample(id="x", image=np.zeros((1, 2, 2)), mask=np.zeros((1, 2, 2)))

    def test_non_finite_image(self):
        with self.assertRaises(ContractError):
            Sample(id="x", image=np.full((3, 2, 2), np.nan), mask=np.zeros((1, 2, 2)))

    def test_stack_batch(self):
        images, masks = stack_batch([make_sample(seed=1), make_sample(seed=2)])
        self.assertEqual(images.shape, (2, 3, 4, 4))
        self.assertEqual(masks.shape, (2, 1, 4, 4))
        self.assertEqual(masks.dtype, np.float32)

    def test_stack_batch_mixed_sizes(self):
        with self.assertRaises(DimensionError):
            stack_batch([make_sample(4, 4), make_sample(4, 8)])


class ParseSizeTests(SimpleTestCase):
    def test_height_then_width(self):
        self.assertEqual(parse_size("96x64"), (96, 64))
        self.assertEqual(parse_size(" 32 X 64 "), (32, 64))

    def test_malformed(self):
        for text in ("64", "64x", "x64", "64*64", "-32x32"):
            with self.subTest(text=text):
                with self.assertRaises(ConfigError):
                    parse_size(text)

    def test_indivisible(self):
        with self.assertRaisesMessage(ConfigError, "dimensions must be divisible by 32"):
            parse_size("48x64")


class SplitTests(SimpleTestCase):
    def setUp(self):
        self.samples = [make_sample(seed=i, sample_id=f"s{i}") for i in range(10)]

    def test_counts(self):
        train, val = split(self.samples, 0.8, seed=0)
        self.assertEqual((len(train), len(val)), (8, 2))

    def test_partition(self):
        train, val = split(self.samples, 0.7, seed=3)
        train_ids, val_ids = {s.id for s in train}, {s.id for s in val}
        self.assertFalse(train_ids & val_ids)
        self.assertEqual(train_ids | val_ids, {s.id for s in self.samples})

    def test_same_seed_same_split(self):
        a = split(self.samples, 0.8, seed=5)
        b = split(self.samples, 0.8, seed=5)
        self.assertEqual([s.id for s in a[0]], [s.id for s in b[0]])
        self.assertEqual([s.id for s in a[1]], [s.id for s in b[1]])

    def test_ratio_out_of_range(self):
        for ratio in (0.0, 1.0, -0.2, 1.5):
            with self.subTest(ratio=ratio):
                with self.assertRaises(ConfigError):
                    split(self.samples, ratio, seed=0)

    def test_empty_side(self):
        with self.assertRaises(ConfigError):
            split(self.samples[:2], 0.9, seed=0)


# ---------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------
class SyntheticTests(SimpleTestCase):
    def test_deterministic(self):
        a = gen_synthetic(4, 64, 64, seed=7)
        b = gen_synthetic(4, 64, 64, seed=7)
        self.assertTrue(all(x.same_as(y) for x, y in zip(a, b)))

    def test_thread_pool_matches_serial(self):
        serial = gen_synthetic(6, 32, 64, seed=2)
        pooled = gen_synthetic(6, 32, 64, seed=2, workers=3)
        self.assertTrue(all(x.same_as(y) for x, y in zip(serial, pooled)))

    def test_seed_matters(self):
        a, b = gen_synthetic(1, 32, 32, seed=1)[0], gen_synthetic(1, 32, 32, seed=2)[0]
        self.assertFalse(np.array_equal(a.image, b.image))

    def test_shapes_ids_and_range(self):
        samples = gen_synthetic(3, 96, 64, seed=0)
        self.assertEqual([s.id for s in samples], ["sample_0000", "sample_0001", "sample_0002"])
        for s in samples:
            self.assertEqual(s.image.shape, (3, 96, 64))
            self.assertEqual(s.mask.shape, (1, 96, 64))
            self.assertGreaterEqual(s.image.min(), 0.0)
            self.assertLessEqual(s.image.max(), 1.0)

    def test_foreground_fraction(self):
        lo, hi = FOREGROUND_RANGE
        fractions = np.array([s.mask.mean() for s in gen_synthetic(1000, 32, 32, seed=11)])
        self.assertTrue(np.all(fractions >= lo))
        self.assertTrue(np.all(fractions <= hi))
        self.assertTrue(np.all(fractions > 0) and np.all(fractions < 1))

    def test_foreground_is_brighter_on_average(self):
        s = gen_synthetic(1, 64, 64, seed=4)[0]
        fg = s.image[:, s.mask[0] == 1].mean()
        bg = s.image[:, s.mask[0] == 0].mean()
        self.assertGreater(fg, bg)

    def test_invalid_requests(self):
        with self.assertRaises(ConfigError):
            gen_synthetic(0, 64, 64, seed=0)
        with self.assertRaises(ConfigError):
            gen_synthetic(2, 48, 64, seed=0)


# ---------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------
class AugmentTests(SimpleTestCase):
    def test_flips_are_involutions(self):
        s = make_sample(4, 6)
        for name in ("hflip", "vflip", "rot180"):
            with self.subTest(name=name):
                twice = apply_augmentation(apply_augmentation(s, name), name)
                self.assertTrue(twice.same_as(s))

    def test_four_quarter_turns(self):
        s = make_sample(5, 5)
        out = s
        for _ in range(4):
            out = apply_augmentation(out, "rot90")
        self.assertTrue(out.same_as(s))
        self.assertTrue(apply_augmentation(apply_augmentation(s, "rot90"), "rot270").same_as(s))

    def test_quarter_turns_only_for_square(self):
        self.assertEqual(available_augmentations(4, 8), SHAPE_PRESERVING)
        self.assertEqual(set(available_augmentations(8, 8)), set(AUGMENTATIONS))
        rng = np.random.default_rng(0)
        s = make_sample(4, 8)
        for _ in range(30):
            self.assertEqual(augment(s, rng).image.shape, (3, 4, 8))

    def test_hflip_reverses_columns(self):
        s = Sample(id="x", image=np.zeros((3, 1, 3)), mask=np.array([[[1, 0, 0]]]))
        assert_array_equal(apply_augmentation(s, "hflip").mask, [[[0, 0, 1]]])

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**16), side=st.integers(1, 6))
    def test_correspondence_and_counts(self, seed, side):
        s = make_sample(side, side, seed=seed)
        out = augment(s, np.random.default_rng(seed))
        self.assertEqual(int(out.mask.sum()), int(s.mask.sum()))
        self.assertTrue(np.all((out.mask == 0) | (out.mask == 1)))
        for name in AUGMENTATIONS:
            moved = apply_augmentation(s, name)
            masked = Sample(id=s.id, image=s.image * s.mask, mask=s.mask)
            assert_array_equal(moved.image * moved.mask, apply_augmentation(masked, name).image)


# ---------------------------------------------------------------------
# PNM files
# ---------------------------------------------------------------------
class PnmTests(TempDirMixin, SimpleTestCase):
    def test_p6_layout(self):
        pixels = list(range(0, 180, 10))  # 3 wide x 2 tall x RGB
        path = write_raw(self.dir / "a.ppm", "P6", 3, 2, pixels)
        image = load_image(path)
        self.assertEqual(image.shape, (3, 2, 3))
        expected = np.array(pixels, dtype=np.float32).reshape(2, 3, 3).transpose(2, 0, 1) / 255.0
        assert_allclose(image, expected, rtol=0, atol=1e-7)

    def test_grey_image_fills_three_channels(self):
        path = write_raw(self.dir / "g.pgm", "P5", 2, 2, [0, 51, 102, 255])
        image = load_image(path)
        self.assertEqual(image.shape, (3, 2, 2))
        assert_array_equal(image[0], image[2])

    def test_mask_threshold(self):
        write_raw(self.dir / "i.pgm", "P5", 4, 1, [0, 0, 0, 0])
        write_raw(self.dir / "m.pgm", "P5", 4, 1, [200, 100, 128, 127])
        sample = load_pair(self.dir / "i.pgm", self.dir / "m.pgm")
        assert_array_equal(sample.mask, [[[1, 0, 1, 0]]])
        self.assertEqual(sample.id, "i")

    def test_save_mask_round_trip(self):
        mask = (np.random.default_rng(0).uniform(size=(1, 5, 7)) > 0.5).astype(np.uint8)
        path = self.dir / "out" / "m.pgm"
        save_mask(mask, path)
        self.assertEqual(path.read_bytes()[:2], b"P5")
        self.assertEqual(set(np.unique(read_pnm(path)).tolist()) - {0, 255}, set())
        write_raw(self.dir / "i.pgm", "P5", 7, 5, [0] * 35)
        assert_array_equal(load_pair(self.dir / "i.pgm", path).mask, mask)

    def test_save_mask_rejects_non_binary(self):
        with self.assertRaises(ContractError):
            save_mask(np.full((2, 2), 3), self.dir / "m.pgm")

    def test_save_image_quantises(self):
        image = np.random.default_rng(1).uniform(size=(3, 4, 5))
        path = self.dir / "i.ppm"
        save_image(image, path)
        self.assertEqual(path.read_bytes()[:2], b"P6")
        assert_allclose(load_image(path), image, atol=0.5 / 255 + 1e-6)

    def test_rejects_other_formats(self):
        path = self.dir / "ascii.pgm"
        path.write_bytes(b"P2\n2 1\n255\n0 255\n")
        with self.assertRaisesMessage(SampleIOError, str(path)):
            read_pnm(path)

    def test_malformed_header(self):
        path = self.dir / "broken.pgm"
        path.write_bytes(b"P5\nwide tall\n255\n")
        with self.assertRaisesMessage(SampleIOError, str(path)):
            read_pnm(path)

    def test_missing_file(self):
        with self.assertRaises(SampleIOError):
            read_pnm(self.dir / "absent.ppm")

    def test_size_mismatch_names_both_files(self):
        image = write_raw(self.dir / "i.ppm", "P6", 2, 2, [0] * 12)
        mask = write_raw(self.dir / "m.pgm", "P5", 3, 2, [0] * 6)
        with self.assertRaises(SampleIOError) as ctx:
            load_pair(image, mask)
        self.assertIn(str(image), str(ctx.exception))
        self.assertIn(str(mask), str(ctx.exception))

    def test_nearest_resize(self):
        image = write_raw(self.dir / "i.pgm", "P5", 2, 2, [0, 255, 255, 0])
        mask = write_raw(self.dir / "m.pgm", "P5", 2, 2, [255, 0, 0, 255])
        sample = load_pair(image, mask, size=(4, 4))
        self.assertEqual(sample.mask.shape, (1, 4, 4))
        assert_array_equal(sample.mask[0, :2, :2], np.ones((2, 2)))
        assert_array_equal(sample.mask[0, :2, 2:], np.zeros((2, 2)))
        self.assertEqual(set(np.unique(sample.image).tolist()), {0.0, 1.0})


# ---------------------------------------------------------------------
# Dataset directories and gen_data
# ---------------------------------------------------------------------
class DatasetTests(TempDirMixin, SimpleTestCase):
    def test_round_trip(self):
        samples = gen_synthetic(3, 32, 32, seed=5)
        save_dataset(samples, self.dir)
        self.assertEqual((self.dir / INDEX_FILE).read_text().split(), [s.id for s in samples])
        image_path, mask_path = sample_paths(self.dir, samples[0].id)
        self.assertEqual(image_path.suffix, ".ppm")
        self.assertEqual(mask_path.suffix, ".pgm")
        loaded = load_dataset(self.dir)
        for a, b in zip(samples, loaded):
            self.assertEqual(a.id, b.id)
            assert_array_equal(a.mask, b.mask)
            assert_allclose(a.image, b.image, atol=0.5 / 255 + 1e-6)

    def test_resize_on_load(self):
        save_dataset(gen_synthetic(2, 32, 32, seed=1), self.dir)
        loaded = load_dataset(self.dir, size=(64, 96), workers=2)
        self.assertEqual(loaded[1].image.shape, (3, 64, 96))

    def test_missing_index(self):
        with self.assertRaises(SampleIOError):
            load_dataset(self.dir)


class GenDataCommandTests(TempDirMixin, SimpleTestCase):
    def run_gen(self, out, **options):
        call_command("gen_data", out=str(out), stdout=StringIO(), **options)

    def test_writes_layout(self):
        self.run_gen(self.dir / "d", n=3, size="64x32", seed=7)
        ids = (self.dir / "d" / INDEX_FILE).read_text().split()
        self.assertEqual(ids, ["sample_0000", "sample_0001", "sample_0002"])
        sample = load_dataset(self.dir / "d")[0]
        self.assertEqual(sample.image.shape, (3, 64, 32))

    def test_rerun_is_byte_identical(self):
        self.run_gen(self.dir / "a", n=2, size="32x32", seed=7)
        self.run_gen(self.dir / "b", n=2, size="32x32", seed=7, workers=2)
        for sample_id in ("sample_0000", "sample_0001"):
            for pa, pb in zip(sample_paths(self.dir / "a", sample_id), sample_paths(self.dir / "b", sample_id)):
                self.assertEqual(pa.read_bytes(), pb.read_bytes())

    def test_indivisible_size(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_gen(self.dir / "d", n=2, size="48x64")
        self.assertEqual(ctx.exception.returncode, EXIT_VALIDATION)
        self.assertIn("dimensions must be divisible by 32", str(ctx.exception))

    def test_zero_samples(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_gen(self.dir / "d", n=0)
        self.assertEqual(ctx.exception.returncode, EXIT_VALIDATION)

    def test_unwritable_target(self):
        blocker = self.dir / "file"
        blocker.write_text("x")
        with self.assertRaises(CommandError) as ctx:
            self.run_gen(blocker / "d", n=1, size="32x32")
        self.assertEqual(ctx.exception.returncode, EXIT_IO)
