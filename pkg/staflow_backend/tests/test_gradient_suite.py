"""Randomized finite-difference sweep: every differentiable op on many small random shapes."""

import unittest

import numpy as np
import pytest

from staflow_backend import ops
from staflow_backend.gradcheck import GRAD_TOL, gradcheck
from staflow_backend.model import temporal_difference
from staflow_backend.tensor import Tensor, precision

N_CASES = 100
MAX_CHECKS = 8


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True, dtype=np.float64)


@pytest.mark.slow
class RandomShapeGradientTests(unittest.TestCase):
    def setUp(self):
        self._precision = precision("double")
        self._precision.__enter__()
        self.addCleanup(self._precision.__exit__, None, None, None)

    def _sweep(self, build, seed):
        """`build(rng)` returns (loss_fn, inputs) for one random case."""
        root = np.random.default_rng(seed)
        for case in range(N_CASES):
            rng = np.random.default_rng(root.integers(2**32))
            fn, inputs = build(rng)
            errors = gradcheck(fn, inputs, max_checks=MAX_CHECKS, rng=rng)
            worst = max(errors.values())
            with self.subTest(case=case, shapes={k: v.shape for k, v in inputs.items()}):
                self.assertLessEqual(worst, GRAD_TOL, errors)

    def test_conv2d(self):
        def build(rng):
            B, Cin, Cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
            H, W = rng.integers(1, 5), rng.integers(2, 7)
            kh, kw = rng.integers(1, H + 1), rng.integers(1, W + 1)
            x, k, b = _t(rng, B, Cin, H, W), _t(rng, Cout, Cin, kh, kw), _t(rng, Cout)
            weights = rng.normal(size=(B, Cout, H - kh + 1, W - kw + 1))
            return (lambda: (ops.conv2d(x, k, b) * weights).sum()), {"x": x, "k": k, "b": b}

        self._sweep(build, 1)

    def test_avg_pool2d(self):
        def build(rng):
            H, W = rng.integers(1, 5), rng.integers(2, 12)
            kernel = (int(rng.integers(1, H + 1)), int(rng.integers(1, W + 1)))
            stride = (int(rng.integers(1, 3)), int(rng.integers(1, 4)))
            x = _t(rng, rng.integers(1, 3), rng.integers(1, 3), H, W)
            out_shape = ops.avg_pool2d(x, kernel, stride).shape
            weights = rng.normal(size=out_shape)
            return (lambda: (ops.avg_pool2d(x, kernel, stride) * weights).sum()), {"x": x}

        self._sweep(build, 2)

    def test_adaptive_avg_pool(self):
        def build(rng):
            H, L = rng.integers(1, 5), rng.integers(1, 12)
            target = (int(rng.integers(1, H + 1)), int(rng.integers(1, L + 1)))
            x = _t(rng, rng.integers(1, 3), rng.integers(1, 3), H, L)
            weights = rng.normal(size=x.shape[:2] + target)
            return (lambda: (ops.adaptive_avg_pool2d(x, target) * weights).sum()), {"x": x}

        self._sweep(build, 3)

    def test_batch_norm_train(self):
        def build(rng):
            B, C, W = rng.integers(2, 5), rng.integers(1, 4), rng.integers(2, 5)
            x, gamma, beta = _t(rng, B, C, 1, W), _t(rng, C), _t(rng, C)
            weights = rng.normal(size=(B, C, 1, W))

            def loss():
                state = ops.BatchNormState(np.zeros(C), np.ones(C))
                return (ops.batch_norm(x, gamma, beta, state, ops.TRAIN) * weights).sum()

            return loss, {"x": x, "gamma": gamma, "beta": beta}

        self._sweep(build, 4)

    def test_layer_norm(self):
        def build(rng):
            D = rng.integers(3, 8)
            x, gamma, beta = _t(rng, rng.integers(1, 4), D), _t(rng, D), _t(rng, D)
            weights = rng.normal(size=x.shape)
            return (lambda: (ops.layer_norm(x, gamma, beta) * weights).sum()), {"x": x, "gamma": gamma, "beta": beta}

        self._sweep(build, 5)

    def test_linear(self):
        def build(rng):
            Din, Dout = rng.integers(1, 6), rng.integers(1, 6)
            lead = tuple(rng.integers(1, 4, size=rng.integers(0, 3)))
            x, w, b = _t(rng, *lead, Din), _t(rng, Dout, Din), _t(rng, Dout)
            weights = rng.normal(size=lead + (Dout,))
            return (lambda: (ops.linear(x, w, b) * weights).sum()), {"x": x, "w": w, "b": b}

        self._sweep(build, 6)

    def test_elu(self):
        def build(rng):
            raw = rng.normal(size=(rng.integers(1, 4), rng.integers(1, 6)))
            # keep clear of the kink at zero
            x = Tensor(np.sign(raw) * (0.05 + np.abs(raw)), requires_grad=True, dtype=np.float64)
            weights = rng.normal(size=x.shape)
            return (lambda: (ops.elu(x) * weights).sum()), {"x": x}

        self._sweep(build, 7)

    def test_dropout_with_fixed_mask(self):
        def build(rng):
            x = _t(rng, rng.integers(1, 4), rng.integers(1, 6))
            p, mask_seed = float(rng.uniform(0.0, 0.8)), int(rng.integers(2**31))
            weights = rng.normal(size=x.shape)

            def loss():
                out = ops.dropout(x, p, ops.TRAIN, np.random.default_rng(mask_seed))
                return (out * weights).sum()

            return loss, {"x": x}

        self._sweep(build, 8)

    def test_softmax_cross_entropy(self):
        def build(rng):
            B, K = rng.integers(1, 6), rng.integers(2, 6)
            logits = _t(rng, B, K, scale=3.0)
            labels = rng.integers(0, K, size=B)
            return (lambda: ops.softmax_cross_entropy(logits, labels)), {"logits": logits}

        self._sweep(build, 9)

    def test_bigru(self):
        def build(rng):
            B, L, Din, H = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 3), rng.integers(1, 3)

            def direction():
                return ops.GRUDirection(
                    _t(rng, 3 * H, Din, scale=0.5), _t(rng, 3 * H, H, scale=0.5),
                    _t(rng, 3 * H, scale=0.5), _t(rng, 3 * H, scale=0.5),
                )

            fwd, bwd = direction(), direction()
            x = _t(rng, B, L, Din)
            weights = rng.normal(size=(B, L, 2 * H))
            inputs = {"x": x}
            for tag, d in (("fwd", fwd), ("bwd", bwd)):
                inputs.update({f"{tag}.w_ih": d.w_ih, f"{tag}.w_hh": d.w_hh, f"{tag}.b_ih": d.b_ih, f"{tag}.b_hh": d.b_hh})
            return (lambda: (ops.bigru(x, fwd, bwd) * weights).sum()), inputs

        self._sweep(build, 10)

    def test_temporal_difference(self):
        def build(rng):
            x = _t(rng, rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 8))
            weights = rng.normal(size=x.shape)
            return (lambda: (temporal_difference(x) * weights).sum()), {"x": x}

        self._sweep(build, 11)


if __name__ == "__main__":
    unittest.main()
