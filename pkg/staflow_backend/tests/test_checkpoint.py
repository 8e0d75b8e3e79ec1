import tempfile
import unittest
from pathlib import Path

import numpy as np

from staflow_backend.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from staflow_backend.errors import BadMagicError, FormatError, IntegrityError, TruncationError, VersionMismatchError
from staflow_backend.model import CONCAT, FULL, forward
from staflow_backend.tensor import Tensor

from .fixtures import randomize_gates, small_params


class CheckpointTests(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.params = small_params(FULL, dtype=np.float32)
        randomize_gates(self.params)
        self.params.buffers["state.bn.running_mean"][...] = 0.5

    def tearDown(self):
        self._tmp.cleanup()

    def test_round_trip_is_bitwise(self):
        path = save_checkpoint(self.params, self.tmp / "model.sfnc")
        loaded = load_checkpoint(path)
        self.assertEqual(loaded.arch, self.params.arch)
        self.assertEqual(list(loaded.tensors), list(self.params.tensors))
        for name, t in self.params.parameters():
            self.assertEqual(loaded[name].data.tobytes(), t.data.tobytes(), name)
        for name, b in self.params.buffers.items():
            np.testing.assert_array_equal(loaded.buffers[name], b)
        self.assertEqual(checkpoint_bytes(loaded), checkpoint_bytes(self.params))

    def test_loaded_model_predicts_identically(self):
        loaded = load_checkpoint(save_checkpoint(self.params, self.tmp / "model.sfnc"))
        X = Tensor(np.random.default_rng(0).normal(size=(2, 4, 160)), dtype=np.float32)
        a, _ = forward(X, self.params)
        b, _ = forward(X, loaded)
        np.testing.assert_array_equal(a.data, b.data)

    def test_double_precision_round_trip(self):
        params = small_params(CONCAT, dtype=np.float64)
        loaded = load_checkpoint(save_checkpoint(params, self.tmp / "double.sfnc"))
        self.assertEqual(loaded.dtype, np.float64)
        self.assertEqual(loaded.arch.variant, CONCAT)

    def test_bad_magic(self):
        path = self.tmp / "bad.sfnc"
        path.write_bytes(b"XXXX" + checkpoint_bytes(self.params)[4:])
        with self.assertRaises(BadMagicError):
            load_checkpoint(path)

    def test_version_mismatch(self):
        blob = bytearray(checkpoint_bytes(self.params))
        blob[4] = 9
        path = self.tmp / "v9.sfnc"
        path.write_bytes(bytes(blob))
        with self.assertRaises(VersionMismatchError):
            load_checkpoint(path)

    def test_truncation_reports_sizes(self):
        blob = checkpoint_bytes(self.params)
        path = self.tmp / "short.sfnc"
        path.write_bytes(blob[:-100])
        with self.assertRaises(TruncationError) as ctx:
            load_checkpoint(path)
        self.assertEqual(ctx.exception.expected, len(blob))
        self.assertEqual(ctx.exception.actual, len(blob) - 100)

    def test_trailing_bytes_rejected(self):
        path = self.tmp / "long.sfnc"
        path.write_bytes(checkpoint_bytes(self.params) + b"\0")
        with self.assertRaises(IntegrityError):
            load_checkpoint(path)

    def test_every_single_byte_corruption_is_detected(self):
        blob = checkpoint_bytes(self.params)
        rng = np.random.default_rng(2024)
        path = self.tmp / "fuzz.sfnc"
        for position in rng.choice(len(blob), size=100, replace=False):
            corrupted = bytearray(blob)
            corrupted[position] ^= int(rng.integers(1, 256))
            path.write_bytes(bytes(corrupted))
            with self.subTest(position=int(position)):
                with self.assertRaises(FormatError):
                    load_checkpoint(path)


if __name__ == "__main__":
    unittest.main()
