import unittest

import numpy as np

from staflow_backend.errors import PrecisionError
from staflow_backend.gradcheck import GRAD_TOL, gradcheck, relative_error
from staflow_backend.tensor import Tensor, concatenate, get_precision, no_grad, precision, stack, zeros


def _leaf(rng, *shape, offset=0.0):
    return Tensor(rng.normal(size=shape) + offset, requires_grad=True, dtype=np.float64)


class TensorBasicsTests(unittest.TestCase):
    def test_default_dtype_follows_precision(self):
        with precision("single"):
            self.assertEqual(Tensor([1.0, 2.0]).dtype, np.float32)
        with precision("double"):
            self.assertEqual(Tensor([1.0, 2.0]).dtype, np.float64)

    def test_precision_context_restores_previous_mode(self):
        before = get_precision()
        with precision("double"):
            pass
        self.assertEqual(get_precision(), before)

    def test_unknown_precision_rejected(self):
        with self.assertRaises(PrecisionError):
            with precision("half"):
                pass

    def test_mixed_precision_in_one_graph_rejected(self):
        a = Tensor([1.0], dtype=np.float32)
        b = Tensor([1.0], dtype=np.float64)
        with self.assertRaises(PrecisionError):
            a + b

    def test_backward_of_simple_expression(self):
        x = Tensor([2.0, -1.0], requires_grad=True, dtype=np.float64)
        y = (x * x * 3.0 + x).sum()
        y.backward()
        np.testing.assert_allclose(x.grad, 6.0 * x.data + 1.0)

    def test_gradients_accumulate_until_zeroed(self):
        x = Tensor([1.0, 2.0], requires_grad=True, dtype=np.float64)
        (x * 2.0).sum().backward()
        (x * 2.0).sum().backward()
        np.testing.assert_allclose(x.grad, [4.0, 4.0])
        x.zero_grad()
        self.assertIsNone(x.grad)

    def test_no_grad_records_no_graph(self):
        x = Tensor([1.0, 2.0], requires_grad=True, dtype=np.float64)
        with no_grad():
            y = (x * 3.0).sum()
        self.assertFalse(y.requires_grad)

    def test_reused_node_gets_both_contributions(self):
        x = Tensor([3.0], requires_grad=True, dtype=np.float64)
        h = x * 2.0
        (h * h).sum().backward()
        np.testing.assert_allclose(x.grad, [8.0 * 3.0])

    def test_broadcast_gradient_sums_stretched_axes(self):
        x = Tensor(np.ones((3, 4)), requires_grad=True, dtype=np.float64)
        b = Tensor(np.ones((1, 4)), requires_grad=True, dtype=np.float64)
        (x + b).sum().backward()
        np.testing.assert_allclose(b.grad, np.full((1, 4), 3.0))

    def test_zeros_helper(self):
        z = zeros((2, 3), dtype=np.float64)
        self.assertEqual(z.shape, (2, 3))
        self.assertEqual(float(z.data.sum()), 0.0)


class TensorGradcheckTests(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(7)
        self._precision = precision("double")
        self._precision.__enter__()

    def tearDown(self):
        self._precision.__exit__(None, None, None)

    def assertGradOk(self, fn, inputs):
        errors = gradcheck(fn, inputs)
        for name, err in errors.items():
            self.assertLessEqual(err, GRAD_TOL, f"{name}: relative error {err:.2e}")

    def test_arithmetic(self):
        a, b = _leaf(self.rng, 3, 4), _leaf(self.rng, 3, 4, offset=3.0)
        self.assertGradOk(lambda: ((a * b - a / b + 2.0 - b) ** 2).sum(), {"a": a, "b": b})

    def test_matmul(self):
        a, b = _leaf(self.rng, 2, 3, 4), _leaf(self.rng, 4, 5)
        self.assertGradOk(lambda: (a @ b).tanh().sum(), {"a": a, "b": b})

    def test_reductions_and_reshapes(self):
        a = _leaf(self.rng, 2, 3, 4)
        self.assertGradOk(
            lambda: (a.mean(axis=(0, 2), keepdims=True) * a).sum(axis=1).reshape(8).transpose(0).exp().sum(),
            {"a": a},
        )

    def test_transpose_and_slicing(self):
        a = _leaf(self.rng, 3, 5)
        self.assertGradOk(lambda: (a.T[1:4, ::2] ** 3).sum() + a[0].sigmoid().sum(), {"a": a})

    def test_fancy_index(self):
        a = _leaf(self.rng, 4, 3)
        idx = np.array([0, 2, 2, 3])
        self.assertGradOk(lambda: (a[idx] * a[idx]).sum(), {"a": a})

    def test_log_of_positive(self):
        a = Tensor(self.rng.uniform(0.5, 2.0, size=(3, 3)), requires_grad=True, dtype=np.float64)
        self.assertGradOk(lambda: (a.log() * a).sum(), {"a": a})

    def test_concatenate_and_stack(self):
        a, b = _leaf(self.rng, 2, 3), _leaf(self.rng, 2, 2)
        self.assertGradOk(
            lambda: (concatenate([a, b], axis=1) ** 2).sum() + stack([a, a * 2.0], axis=0).tanh().sum(),
            {"a": a, "b": b},
        )


class GradcheckHelperTests(unittest.TestCase):
    def test_relative_error_zero_for_identical(self):
        self.assertEqual(relative_error(np.ones(3), np.ones(3)), 0.0)

    def test_detects_wrong_gradient(self):
        with precision("double"):
            x = Tensor([0.3, -0.7], requires_grad=True)

            def broken_square():
                # backward claims 3x instead of 2x
                return Tensor.from_op(x.data**2, (x,), lambda g: (3.0 * g * x.data,), "broken").sum()

            errors = gradcheck(broken_square, {"x": x})
            self.assertGreater(errors["x"], GRAD_TOL)


if __name__ == "__main__":
    unittest.main()
