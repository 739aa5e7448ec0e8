"""Tests for the finite-difference gradient checker and its suite."""

import unittest

import numpy as np

from saliency.gradcheck import all_passed, check_gradients, relative_error, run_suite
from saliency.tensor import Tensor, conv2d, corrupted_backward, matmul, mul, reduce_sum, sigmoid


class TestRelativeError(unittest.TestCase):
    def test_scaled_by_larger_magnitude(self):
        self.assertAlmostEqual(relative_error(2.0, 1.0), 0.5)
        self.assertAlmostEqual(relative_error(-1.0, -1.0), 0.0)

    def test_floor_for_tiny_gradients(self):
        self.assertAlmostEqual(relative_error(1e-9, 0.0), 1e-3)


class TestCheckGradients(unittest.TestCase):
    def test_smooth_function_passes_tightly(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.standard_normal((3, 4)))
        b = Tensor(rng.standard_normal((4, 2)))
        result = check_gradients(lambda: reduce_sum(sigmoid(matmul(a, b))), {"a": a, "b": b},
                                 rng, "matmul", samples=6, tolerance=1e-5)
        self.assertTrue(result.passed, result.to_dict())
        self.assertEqual(result.samples, 12)
        self.assertIsNone(a.grad)

    def test_values_restored_after_probing(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((2, 3)))
        before = x.data.copy()
        check_gradients(lambda: reduce_sum(mul(x, x)), {"x": x}, rng, samples=6)
        np.testing.assert_array_equal(x.data, before)

    def test_corrupted_rule_is_detected(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.standard_normal((1, 2, 5, 5)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        r = rng.standard_normal((1, 3, 5, 5))
        with corrupted_backward("conv2d", 1.5):
            result = check_gradients(lambda: reduce_sum(mul(conv2d(x, w, padding=1), r)),
                                     {"x": x, "w": w}, rng, "conv", samples=5)
        self.assertFalse(result.passed)
        self.assertGreater(result.max_rel_error, 0.3)


class TestSuite(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.results = run_suite(samples=3, seed=0)

    def test_every_module_passes(self):
        failed = {r.module: r.max_rel_error for r in self.results if not r.passed}
        self.assertEqual(failed, {})
        self.assertTrue(all_passed(self.results))

    def test_covers_every_block(self):
        modules = [r.module for r in self.results]
        for name in ("op:conv2d", "backbone", "dswsam", "swsam", "swsam:sge", "ktm", "predictor", "loss"):
            self.assertIn(name, modules)

    def test_corrupted_conv_fails_suite(self):
        with corrupted_backward("conv2d", 1.5):
            results = run_suite(samples=2, seed=0)
        self.assertFalse(all_passed(results))
        conv = next(r for r in results if r.module == "op:conv2d")
        self.assertFalse(conv.passed)

    def test_impossible_tolerance_fails(self):
        self.assertFalse(all_passed(run_suite(tolerance=1e-12, samples=2, seed=1)))


if __name__ == "__main__":
    unittest.main()
