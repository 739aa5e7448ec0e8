"""Tests for synthetic scenes, D4 augmentation, manifests and PNG map I/O."""

import os
import tempfile
import unittest

import numpy as np
from PIL import Image

from saliency.data import (
    AUGMENT_OPS,
    Sample,
    SynthConfig,
    SynthObject,
    _sample_layout,
    augment,
    compose_ops,
    iter_batches,
    load_manifest,
    load_map,
    load_mask,
    normalize_heatmap,
    read_manifest,
    render_sample,
    resize_map,
    save_dataset,
    save_map,
    synthesize,
)
from saliency.errors import ConfigError, DataError, ShapeError

try:
    from scipy import stats
except ImportError:  # pragma: no cover
    stats = None


class TestSynthObject(unittest.TestCase):
    def test_axis_aligned_rectangle(self):
        mask = SynthObject("rectangle", 16, 16, 16, 16, 0.0).rasterize(32)
        self.assertEqual(int(mask.sum()), 256)
        self.assertTrue(mask[8:24, 8:24].all())
        self.assertFalse(mask[:8].any())

    def test_right_angle_rotation_swaps_axes(self):
        wide = SynthObject("rectangle", 16, 16, 20, 6, 0.0).rasterize(32)
        tall = SynthObject("rectangle", 16, 16, 20, 6, 90.0).rasterize(32)
        np.testing.assert_array_equal(tall, wide.T)

    def test_ellipse_inside_bounding_box(self):
        mask = SynthObject("ellipse", 16, 16, 20, 10, 0.0).rasterize(32)
        box = SynthObject("rectangle", 16, 16, 20, 10, 0.0).rasterize(32)
        self.assertTrue(mask.any())
        self.assertFalse((mask & ~box).any())

    def test_line_has_minimum_thickness(self):
        mask = SynthObject("line", 16, 16, 20, 0.5, 0.0).rasterize(32)
        self.assertEqual(int(mask.sum()), 40)

    def test_unknown_shape(self):
        with self.assertRaises(ConfigError):
            SynthObject("hexagon", 16, 16, 8, 8, 0.0).rasterize(32)


class TestSynthesis(unittest.TestCase):
    def test_deterministic(self):
        cfg = SynthConfig(seed=7, count=3, size=32)
        first, second = synthesize(cfg), synthesize(cfg)
        for a, b in zip(first, second):
            self.assertEqual(a.id, b.id)
            np.testing.assert_array_equal(a.image, b.image)
            np.testing.assert_array_equal(a.mask, b.mask)
            self.assertEqual(a.meta, b.meta)

    def test_samples_regenerate_independently(self):
        cfg = SynthConfig(seed=3, count=5, size=32)
        np.testing.assert_array_equal(render_sample(cfg, 3).image, synthesize(cfg)[3].image)

    def test_sample_contents(self):
        for sample in synthesize(SynthConfig(seed=1, count=4, size=32)):
            self.assertEqual(sample.image.shape, (3, 32, 32))
            self.assertEqual(sample.mask.shape, (1, 32, 32))
            self.assertTrue(sample.mask.any())
            self.assertTrue(set(np.unique(sample.mask)) <= {0.0, 1.0})
            self.assertGreaterEqual(sample.image.min(), 0.0)
            self.assertLessEqual(sample.image.max(), 1.0)
            self.assertEqual(len(sample.meta["orientations"]), sample.meta["objects"])

    @unittest.skipIf(stats is None, "scipy not installed")
    def test_orientations_uniform(self):
        cfg = SynthConfig(size=32, min_objects=1, max_objects=1)
        rng = np.random.default_rng(2024)
        angles = [_sample_layout(rng, cfg)[0].angle for _ in range(500)]
        self.assertTrue(all(0.0 <= a < 180.0 for a in angles))
        counts, _ = np.histogram(angles, bins=18, range=(0.0, 180.0))
        self.assertGreater(stats.chisquare(counts).pvalue, 0.01)

    def test_invalid_configs(self):
        with self.assertRaises(ConfigError):
            SynthConfig(size=48)
        with self.assertRaises(ConfigError):
            SynthConfig(count=0)
        with self.assertRaises(ConfigError):
            SynthConfig(min_objects=3, max_objects=2)
        with self.assertRaises(ConfigError):
            SynthConfig(shapes=("star",))

    def test_sample_shape_checks(self):
        with self.assertRaises(ShapeError):
            Sample("x", np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))
        with self.assertRaises(ShapeError):
            Sample("x", np.zeros((3, 8, 8)), np.zeros((1, 4, 4)))


class TestAugmentation(unittest.TestCase):
    def setUp(self):
        self.sample = render_sample(SynthConfig(seed=5, size=32), 0)

    def test_group_closure(self):
        for first in AUGMENT_OPS:
            for second in AUGMENT_OPS:
                self.assertIn(compose_ops(first, second), AUGMENT_OPS)

    def test_inverses(self):
        self.assertEqual(compose_ops("rot180", "rot180"), "identity")
        self.assertEqual(compose_ops("rot90", "rot270"), "identity")
        self.assertEqual(compose_ops("hflip", "hflip"), "identity")
        twice = augment(augment(self.sample, "rot180"), "rot180")
        np.testing.assert_array_equal(twice.image, self.sample.image)

    def test_hflip_moves_left_half_right(self):
        mask = np.zeros((1, 4, 4))
        mask[..., :2] = 1.0
        flipped = augment(Sample("m", np.zeros((3, 4, 4)), mask), "hflip")
        np.testing.assert_array_equal(flipped.mask[0, :, 2:], 1.0)
        np.testing.assert_array_equal(flipped.mask[0, :, :2], 0.0)
        self.assertEqual(flipped.id, "m@hflip")

    def test_mask_and_image_move_together(self):
        for op in AUGMENT_OPS:
            out = augment(self.sample, op)
            self.assertEqual(out.mask.sum(), self.sample.mask.sum())
            np.testing.assert_allclose(np.sort(out.image.ravel()), np.sort(self.sample.image.ravel()))

    def test_unknown_op(self):
        with self.assertRaises(ConfigError):
            augment(self.sample, "rot45")


class TestFiles(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()

    def test_manifest_round_trip(self):
        samples = synthesize(SynthConfig(seed=2, count=3, size=32))
        manifest = save_dataset(samples, self.dir)
        loaded = load_manifest(manifest, 32)
        self.assertEqual([s.id for s in loaded], [s.id for s in samples])
        for original, restored in zip(samples, loaded):
            np.testing.assert_allclose(restored.image, original.image, atol=1.0 / 255)
            np.testing.assert_array_equal(restored.mask, original.mask)
        self.assertTrue(os.path.isfile(os.path.join(self.dir, "metadata.jsonl")))

    def test_mask_binarisation(self):
        path = os.path.join(self.dir, "gt.png")
        Image.fromarray(np.array([[0, 128, 255]], dtype=np.uint8)).save(path)
        np.testing.assert_array_equal(load_mask(path)[0], [[0.0, 1.0, 1.0]])

    def test_map_quantisation(self):
        values = np.random.default_rng(0).uniform(size=(8, 8))
        path = save_map(values, os.path.join(self.dir, "maps", "m.png"))
        np.testing.assert_allclose(load_map(path), values, atol=0.5 / 255 + 1e-12)

    def test_empty_manifest(self):
        path = os.path.join(self.dir, "manifest.tsv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# nothing here\n")
        with self.assertRaises(DataError):
            read_manifest(path)

    def test_malformed_manifest_line(self):
        path = os.path.join(self.dir, "manifest.tsv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("only-one-column.png\n")
        with self.assertRaises(DataError):
            read_manifest(path)

    def test_missing_image(self):
        with self.assertRaises(DataError):
            load_map(os.path.join(self.dir, "absent.png"))


class TestHelpers(unittest.TestCase):
    def test_batches_cover_every_index(self):
        batches = list(iter_batches(10, 4, np.random.default_rng(0)))
        self.assertEqual([len(b) for b in batches], [4, 4, 2])
        self.assertEqual(sorted(np.concatenate(batches).tolist()), list(range(10)))

    def test_resize_map(self):
        values = np.full((4, 4), 0.25)
        np.testing.assert_allclose(resize_map(values, 8, 6), 0.25, atol=1e-6)
        self.assertEqual(resize_map(values, 8, 6).shape, (8, 6))

    def test_normalize_heatmap(self):
        np.testing.assert_allclose(normalize_heatmap(np.array([[2.0, 4.0]])), [[0.0, 1.0]])
        np.testing.assert_array_equal(normalize_heatmap(np.ones((2, 2))), 0.0)


if __name__ == "__main__":
    unittest.main()
