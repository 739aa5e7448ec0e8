"""Tests for the tensor core: ops against naive oracles, the tape, Adam and layers."""

import math
import unittest

import numpy as np

from saliency.errors import ConfigError, NumericalError, ShapeError, TapeError
from saliency.layers import Conv2d, Module
from saliency.optim import Parameter, adam_step, kaiming_normal
from saliency.tensor import (
    Tensor,
    backward,
    bilinear_upsample,
    channel_max,
    channel_mean,
    concat_channels,
    conv2d,
    corrupted_backward,
    current_tape,
    elementwise,
    matmul,
    mul,
    no_grad,
    reduce_sum,
    sigmoid,
    softmax_rows,
    split_channels,
)


def naive_conv(x, w, b, stride, padding):
    n, c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, c_out, ho, wo))
    for i in range(n):
        for o in range(c_out):
            for r in range(ho):
                for q in range(wo):
                    acc = b[o] if b is not None else 0.0
                    for c in range(c_in):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[i, c, r * stride + u, q * stride + v] * w[o, c, u, v]
                    out[i, o, r, q] = acc
    return out


class TestConv2d(unittest.TestCase):
    def setUp(self):
        current_tape().clear()

    def test_box_sum_counts(self):
        out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)),
                     stride=1, padding=1)
        self.assertEqual(out.data[0, 0, 1, 1], 9.0)
        self.assertEqual(out.data[0, 0, 0, 0], 4.0)

    def test_channel_selector(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 5, 5))
        w = np.zeros((1, 3, 1, 1))
        w[0, 2, 0, 0] = 1.0
        out = conv2d(Tensor(x), Tensor(w))
        np.testing.assert_array_equal(out.data[:, 0], x[:, 2])

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(42)
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        for stride, padding in ((1, 1), (2, 1), (2, 0)):
            with self.subTest(stride=stride, padding=padding):
                out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
                expected = naive_conv(x, w, b, stride, padding)
                np.testing.assert_allclose(out.data, expected, rtol=1e-12, atol=1e-12)

    def test_channel_mismatch_names_channels(self):
        with self.assertRaises(ShapeError) as ctx:
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
        self.assertIn("2 channels", str(ctx.exception))

    def test_kernel_larger_than_input(self):
        with self.assertRaises(ShapeError):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


class TestMatmulSoftmax(unittest.TestCase):
    def test_identity_and_zeros(self):
        b = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(matmul(Tensor(np.eye(3)), Tensor(b)).data, b)
        np.testing.assert_array_equal(matmul(Tensor(b), Tensor(np.zeros((2, 4)))).data, np.zeros((3, 4)))

    def test_triple_loop_oracle(self):
        rng = np.random.default_rng(7)
        a, b = rng.standard_normal((4, 5)), rng.standard_normal((5, 6))
        expected = np.zeros((4, 6))
        for i in range(4):
            for j in range(6):
                expected[i, j] = sum(a[i, k] * b[k, j] for k in range(5))
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, expected, rtol=1e-12, atol=1e-12)

    def test_inner_dimension_mismatch(self):
        with self.assertRaises(ShapeError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_uniform_row(self):
        np.testing.assert_allclose(softmax_rows(Tensor(np.zeros((1, 3)))).data, [[1 / 3, 1 / 3, 1 / 3]])

    def test_large_values_do_not_overflow(self):
        out = softmax_rows(Tensor([[1000.0, 0.0]])).data
        self.assertTrue(np.all(np.isfinite(out)))
        self.assertAlmostEqual(out[0, 0], 1.0)
        self.assertAlmostEqual(out[0, 1], 0.0)

    def test_extended_precision_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((5, 5))
        out = softmax_rows(Tensor(x)).data
        for i in range(5):
            denom = math.fsum(math.exp(v) for v in x[i])
            for j in range(5):
                self.assertAlmostEqual(out[i, j], math.exp(x[i, j]) / denom, delta=1e-10)

    def test_nan_rejected(self):
        with self.assertRaises(NumericalError):
            softmax_rows(Tensor([[0.0, float("nan")]]))


class TestStructuralOps(unittest.TestCase):
    def test_sigmoid_zero(self):
        self.assertEqual(sigmoid(Tensor(0.0)).item(), 0.5)

    def test_split_then_concat_is_identity(self):
        x = np.random.default_rng(1).standard_normal((1, 32, 4, 4))
        parts = split_channels(Tensor(x), 4)
        self.assertEqual([p.shape[1] for p in parts], [8, 8, 8, 8])
        np.testing.assert_array_equal(concat_channels(parts).data, x)

    def test_bilinear_closed_form(self):
        out = bilinear_upsample(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), 2).data[0, 0]
        expected = np.array([
            [1.0, 1.25, 1.75, 2.0],
            [1.5, 1.75, 2.25, 2.5],
            [2.5, 2.75, 3.25, 3.5],
            [3.0, 3.25, 3.75, 4.0],
        ])
        np.testing.assert_allclose(out, expected, atol=1e-15)

    def test_bilinear_unsupported_factor(self):
        with self.assertRaises(ShapeError):
            bilinear_upsample(Tensor(np.zeros((1, 1, 2, 2))), 3)

    def test_channel_pooling(self):
        x = np.random.default_rng(2).standard_normal((2, 5, 3, 3))
        np.testing.assert_array_equal(channel_max(Tensor(x)).data, x.max(axis=1, keepdims=True))
        np.testing.assert_allclose(channel_mean(Tensor(x)).data, x.mean(axis=1, keepdims=True))

    def test_elementwise_dispatch(self):
        self.assertEqual(elementwise("relu", Tensor([-1.0, 2.0])).data.tolist(), [0.0, 2.0])
        with self.assertRaises(ConfigError):
            elementwise("tanh", Tensor(0.0))

    def test_broadcast_mismatch(self):
        with self.assertRaises(ShapeError):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros(4))

    def test_item_requires_single_element(self):
        with self.assertRaises(ShapeError):
            Tensor([1.0, 2.0]).item()


class TestBackward(unittest.TestCase):
    def setUp(self):
        current_tape().clear()

    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_half_square_gives_identity(self):
        data = np.random.default_rng(1).standard_normal(6)
        x = Tensor(data, requires_grad=True)
        backward(reduce_sum(mul(x, x)) / 2.0)
        np.testing.assert_allclose(x.grad, data)

    def test_broadcast_gradient_is_summed(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.zeros(3), requires_grad=True)
        backward((a + b).sum())
        np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])

    def test_leaf_gradients_accumulate(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward((x * 3.0).sum())
        backward((x * 3.0).sum())
        np.testing.assert_array_equal(x.grad, [6.0, 6.0])

    def test_second_backward_raises(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = (x * x).sum()
        backward(loss)
        with self.assertRaises(TapeError):
            backward(loss)

    def test_non_scalar_loss_raises(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with self.assertRaises(TapeError):
            backward(x * 2.0)

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with no_grad():
            y = sigmoid(x * x)
        self.assertFalse(y.requires_grad)
        self.assertEqual(len(current_tape()), 0)
        with self.assertRaises(TapeError):
            backward(y.sum())

    def test_corrupted_backward_scales_gradient(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with corrupted_backward("mul", 2.0):
            backward(reduce_sum(mul(x, 3.0)))
        np.testing.assert_array_equal(x.grad, [6.0, 6.0])


class TestAdam(unittest.TestCase):
    def _param(self, values, **kwargs):
        return Parameter("p", Tensor(np.array(values, dtype=float)), **kwargs)

    def test_first_step_moves_by_lr(self):
        p = self._param([0.0])
        p.value.grad = np.array([1.0])
        adam_step([p], lr=1e-4)
        self.assertAlmostEqual(p.value.data[0], -1e-4, delta=1e-11)
        self.assertEqual(p.step_count, 1)
        self.assertIsNone(p.grad)

    def test_zero_gradient_leaves_value(self):
        p = self._param([0.3, -0.2])
        p.value.grad = np.zeros(2)
        adam_step([p], lr=0.1)
        np.testing.assert_array_equal(p.value.data, [0.3, -0.2])
        self.assertEqual(p.step_count, 1)

    def test_scripted_three_step_trace(self):
        p = self._param([1.0, -2.0])
        grads = [np.array([0.5, -0.1]), np.array([0.2, 0.3]), np.array([-0.4, 0.05])]
        value, m, v = np.array([1.0, -2.0]), np.zeros(2), np.zeros(2)
        for t, g in enumerate(grads, start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            value = value - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            p.value.grad = g.copy()
            adam_step([p], lr=0.01)
        np.testing.assert_allclose(p.value.data, value, rtol=1e-12)

    def test_missing_gradient_raises(self):
        with self.assertRaises(TapeError):
            adam_step([self._param([1.0])], lr=0.1)

    def test_frozen_parameter_untouched(self):
        p = self._param([1.0], trainable=False)
        adam_step([p], lr=0.1)
        self.assertEqual(p.value.data[0], 1.0)
        self.assertEqual(p.step_count, 0)

    def test_mask_survives_steps(self):
        mask = np.array([1.0, 0.0, 1.0])
        p = self._param([1.0, 1.0, 1.0], mask=mask)
        self.assertEqual(p.value.data[1], 0.0)
        for _ in range(5):
            p.value.grad = np.array([0.1, -1.0, 0.2])
            adam_step([p], lr=0.5)
        self.assertEqual(p.value.data[1], 0.0)

    def test_kaiming_scale(self):
        draws = kaiming_normal(np.random.default_rng(0), (200, 50), fan_in=50)
        self.assertAlmostEqual(float(draws.std()), math.sqrt(2.0 / 50), delta=0.01)


class TestLayers(unittest.TestCase):
    def setUp(self):
        current_tape().clear()

    def test_masked_kernel_gets_no_off_support_gradient(self):
        mask = np.zeros((3, 3))
        mask[1, :] = 1.0
        conv = Conv2d("c", 2, 2, 3, np.random.default_rng(0), mask=mask)
        x = Tensor(np.random.default_rng(1).standard_normal((1, 2, 5, 5)))
        backward(conv(x).sum())
        off = conv.weight.grad[:, :, [0, 2], :]
        self.assertTrue(np.all(off == 0.0))
        self.assertTrue(np.all(conv.weight.value.data[:, :, [0, 2], :] == 0.0))

    def test_parameters_discovered_recursively(self):
        class Pair(Module):
            def __init__(self):
                super().__init__("pair")
                rng = np.random.default_rng(0)
                self.convs = [(Conv2d(self.path("a"), 1, 1, 1, rng), Conv2d(self.path("b"), 1, 1, 1, rng, bias=False))]

        names = list(Pair().named_parameters())
        self.assertEqual(names, ["pair/a/weight", "pair/a/bias", "pair/b/weight"])

    def test_duplicate_names_rejected(self):
        class Twins(Module):
            def __init__(self):
                super().__init__("")
                rng = np.random.default_rng(0)
                self.first = Conv2d("same", 1, 1, 1, rng)
                self.second = Conv2d("same", 1, 1, 1, rng)

        with self.assertRaises(ConfigError) as ctx:
            Twins().named_parameters()
        self.assertIn("same/weight", str(ctx.exception))


if __name__ == "__main__":
    unittest.main()
