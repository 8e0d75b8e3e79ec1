import json
import tempfile
import unittest
from pathlib import Path

from main import main
from staflow_backend.storage_eegb import save_eegb
from staflow_backend.tests.fixtures import SMALL_ARCH, small_trials
from staflow_api.views import dispatch

SMALL_SYNTH = {"n_classes": 2, "trials_per_class": 10, "n_channels": 4, "duration_s": 0.64, "sample_rate_hz": 250.0}
SMALL_TRAIN = {"max_epochs": 2, "patience": 1, "batch_size": 8, "arch": SMALL_ARCH}


class SynthViewTests(unittest.TestCase):
    def test_same_seed_writes_identical_files(self):
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            for out in (a, b):
                payload, code = dispatch("synth", {"out_dir": out, "synth": {**SMALL_SYNTH, "seed": 9}})
                self.assertEqual(code, 0, payload)
                self.assertEqual(payload["status"], "success")
            for name in ("train.eegb", "test.eegb", "synth.json"):
                self.assertEqual((Path(a) / name).read_bytes(), (Path(b) / name).read_bytes(), name)
            self.assertNotEqual((Path(a) / "train.eegb").read_bytes(), (Path(a) / "test.eegb").read_bytes())
            sidecar = json.loads((Path(a) / "synth.json").read_text(encoding="utf-8"))
        self.assertEqual(sidecar["spec"]["seed"], 9)
        self.assertNotEqual(sidecar["train"]["seed"], sidecar["test"]["seed"])

    def test_invalid_spec_exits_with_config_status(self):
        with tempfile.TemporaryDirectory() as out:
            payload, code = dispatch("synth", {"out_dir": out, "synth": {"n_classes": 1}})
            self.assertEqual(list(Path(out).iterdir()), [])
        self.assertEqual(code, 2)
        self.assertEqual(payload["status"], "error")
        self.assertIn("n_classes", payload["details"])


class PipelineViewTests(unittest.TestCase):
    """synth -> train -> eval / export on one small synthetic session."""

    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls._tmp.name)
        payload, code = dispatch("synth", {"out_dir": str(cls.root / "data"), "synth": SMALL_SYNTH})
        assert code == 0, payload
        cls.files = {"train_file": payload["train_file"], "test_file": payload["test_file"]}
        cls.run_dir = cls.root / "run"
        cls.train_payload, cls.train_code = dispatch(
            "train", {**cls.files, "out_dir": str(cls.run_dir), "train": SMALL_TRAIN, "seeds": 1}
        )

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def test_train_writes_its_outputs(self):
        self.assertEqual(self.train_code, 0, self.train_payload)
        self.assertEqual(self.train_payload["aggregate"]["n_runs"], 1)
        for name in ("metrics.json", "metrics.txt", "checkpoint.sfnc", "history/seed_0.csv"):
            self.assertTrue((self.run_dir / name).is_file(), name)
        self.assertIn("Accuracy (%)", (self.run_dir / "metrics.txt").read_text(encoding="utf-8"))

    def test_rerun_writes_identical_metrics(self):
        again = self.root / "again"
        payload, code = dispatch("train", {**self.files, "out_dir": str(again), "train": SMALL_TRAIN, "seeds": 1})
        self.assertEqual(code, 0, payload)
        self.assertEqual((again / "metrics.json").read_bytes(), (self.run_dir / "metrics.json").read_bytes())
        self.assertEqual((again / "checkpoint.sfnc").read_bytes(), (self.run_dir / "checkpoint.sfnc").read_bytes())

    def test_eval_reproduces_training_accuracy(self):
        out = self.root / "eval"
        payload, code = dispatch(
            "eval",
            {"out_dir": str(out), "checkpoint": str(self.run_dir / "checkpoint.sfnc"), "data_file": self.files["test_file"]},
        )
        self.assertEqual(code, 0, payload)
        trained = json.loads((self.run_dir / "metrics.json").read_text(encoding="utf-8"))
        self.assertEqual(payload["metrics"]["accuracy"], trained["per_seed"][0]["accuracy"])
        self.assertTrue((out / "eval_metrics.json").is_file())

    def test_export_writes_weights_and_features(self):
        out = self.root / "export"
        payload, code = dispatch(
            "export",
            {"out_dir": str(out), "checkpoint": str(self.run_dir / "checkpoint.sfnc"), "data_file": self.files["test_file"]},
        )
        self.assertEqual(code, 0, payload)
        for name in ("state_spatial_weights.csv", "flow_spatial_weights.csv", "Z_features.csv", "FlowOnly/Z_features.csv"):
            self.assertTrue((out / name).is_file(), name)
        fisher = json.loads((out / "fisher.json").read_text(encoding="utf-8"))
        self.assertEqual(fisher["variant"], "Full")
        self.assertEqual(set(fisher["stages"]), {"state", "flow", "mod1", "mod2", "mod3", "Z"})
        self.assertEqual(payload["stages"]["Z"], [20, 16 * 21])

    def test_corrupted_checkpoint_exits_with_data_status(self):
        broken = self.root / "broken.sfnc"
        raw = bytearray((self.run_dir / "checkpoint.sfnc").read_bytes())
        raw[0] ^= 0xFF
        broken.write_bytes(bytes(raw))
        for command in ("eval", "export"):
            payload, code = dispatch(command, {"out_dir": str(self.root / "bad"), "checkpoint": str(broken), "data_file": self.files["test_file"]})
            with self.subTest(command=command):
                self.assertEqual(code, 3)
                self.assertEqual(payload["status"], "error")

    def test_channel_mismatch_exits_with_config_status(self):
        trials = small_trials(seed=3)
        other = save_eegb(trials.replace_data(trials.data[:, :3]), self.root / "three_channels.eegb")
        payload, code = dispatch(
            "train", {"train_file": self.files["train_file"], "test_file": str(other), "out_dir": str(self.root / "x"), "train": SMALL_TRAIN, "seeds": 1}
        )
        self.assertEqual(code, 2)
        self.assertIn("channels", payload["details"])
        self.assertFalse((self.root / "x").exists())

    def test_ablation_compares_every_variant_with_full(self):
        out = self.root / "ablate"
        payload, code = dispatch("ablate", {**self.files, "out_dir": str(out), "train": SMALL_TRAIN, "seeds": [0, 1]})
        self.assertEqual(code, 0, payload)
        saved = json.loads((out / "ablation.json").read_text(encoding="utf-8"))
        rows = saved["table"]
        self.assertEqual([r["variant"] for r in rows], ["Full", "StateOnly", "FlowOnly", "RandomState", "Concat"])
        self.assertEqual(rows[0]["p"], 1.0)
        self.assertTrue(saved["variants"]["Full"]["comparisons"][0]["all_zero"])
        self.assertTrue((out / "history" / "Concat" / "seed_1.csv").is_file())


class MainTests(unittest.TestCase):
    def test_exit_codes(self):
        self.assertEqual(main([]), 2)
        self.assertEqual(main(["train", "--config", "no-such-config.json"]), 2)
        with tempfile.TemporaryDirectory() as out:
            argv = ["synth", "--out_dir", out, "--synth.n_channels", "4", "--synth.trials_per_class", "5", "--synth.duration_s", "0.64"]
            self.assertEqual(main(argv), 0)
            self.assertTrue((Path(out) / "train.eegb").is_file())


if __name__ == "__main__":
    unittest.main()
