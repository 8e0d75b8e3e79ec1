# staflow.py (StaFlowService: end-to-end synth / train / ablate / export / eval workflows)
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from staflow_backend import settings
from staflow_backend.checkpoint import load_checkpoint, save_checkpoint
from staflow_backend.errors import ConfigError
from staflow_backend.features import export_stage_features
from staflow_backend.metrics import MetricsReport, aggregate, compare_reports, evaluate
from staflow_backend.model import FLOW_ONLY, FULL, StaFlowParams, export_spatial_weights
from staflow_backend.preprocessing import bandpass_filter, decimate
from staflow_backend.stats import significance_stars
from staflow_backend.storage_eegb import save_eegb
from staflow_backend.storage_factory import load_trials
from staflow_backend.synth import SynthSpec, synth_generate
from staflow_backend.tensor import precision
from staflow_backend.training import SeedRun, TrainConfig, check_pair, report_from_runs, run_seeds
from staflow_backend.trials import TrialSet
from staflow_api.serializers import PreprocessConfig, RunConfig, Subject

logger = logging.getLogger("staflow")

# Output file names under out_dir
TRAIN_EEGB = "train.eegb"
TEST_EEGB = "test.eegb"
SYNTH_SIDECAR = "synth.json"
CHECKPOINT_NAME = "checkpoint.sfnc"
METRICS_NAME = "metrics.json"
TABLE_NAME = "metrics.txt"
ABLATION_JSON = "ablation.json"
ABLATION_TABLE = "ablation.txt"
FISHER_NAME = "fisher.json"
EVAL_NAME = "eval_metrics.json"
HISTORY_DIR = "history"


def preprocess(trials: TrialSet, cfg: PreprocessConfig) -> TrialSet:
    """Decimate first, then bandpass at the resulting rate."""
    if cfg.decimate > 1:
        trials = decimate(trials, cfg.decimate)
    if cfg.bandpass is not None:
        trials = bandpass_filter(trials, cfg.bandpass, zero_phase=cfg.zero_phase)
    return trials


def _check_filter(cfg: PreprocessConfig, trials: TrialSet, where: str) -> List[str]:
    if cfg.bandpass is None:
        return []
    rate = trials.sample_rate_hz / cfg.decimate
    return [f"{where}: {p}" for p in cfg.bandpass.problems(rate)]


def render_table(rows: Sequence[dict]) -> str:
    """Aligned plain-text table: mean ± std per metric, then the Wilcoxon column."""
    frame = pd.DataFrame(
        [
            {
                "Variant": r["variant"],
                "Accuracy (%)": f"{100 * r['acc_mean']:.2f} ± {100 * r['acc_std']:.2f}",
                "Kappa": f"{r['kappa_mean']:.4f} ± {r['kappa_std']:.4f}",
                "F1": f"{r['f1_mean']:.4f} ± {r['f1_std']:.4f}",
                "p vs Full": "-" if r.get("p") is None else f"{r['p']:.4g}{significance_stars(r['p'])}",
            }
            for r in rows
        ]
    )
    return frame.to_string(index=False) + "\n"


class StaFlowService:
    def __init__(self, out_dir: Optional[Path] = None, n_jobs: Optional[int] = None):
        self.out_dir = Path(out_dir or settings.OUT_DIR)
        self.n_jobs = n_jobs or settings.THREADS

    def _ensure_out_dir(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir

    # synth ------------------------------------------------------------------

    def synthesize(self, spec: SynthSpec) -> Dict[str, str]:
        """Train/test EEGB pair with independent seeds drawn from spec.seed, plus a provenance sidecar."""
        spec.validate()
        out = self._ensure_out_dir()
        train_seed, test_seed = (int(s) for s in np.random.SeedSequence(spec.seed).generate_state(2))
        train_path = save_eegb(synth_generate(spec.reseeded(train_seed)), out / TRAIN_EEGB)
        test_path = save_eegb(synth_generate(spec.reseeded(test_seed)), out / TEST_EEGB)
        sidecar = {
            "spec": spec.to_dict(),
            "train": {"file": TRAIN_EEGB, "seed": train_seed},
            "test": {"file": TEST_EEGB, "seed": test_seed},
        }
        (out / SYNTH_SIDECAR).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return {"train_file": str(train_path), "test_file": str(test_path), "sidecar": str(out / SYNTH_SIDECAR)}

    # data loading ---------------------------------------------------------------

    def load_subjects(
        self, subjects: Sequence[Subject], cfg: PreprocessConfig, train_cfg: TrainConfig
    ) -> List[Tuple[Subject, TrialSet, TrialSet]]:
        """Load, check and preprocess every subject; all problems surface before training starts."""
        loaded, problems = [], []
        for s in subjects:
            tag = f"subject {s.name}" if s.name else "data"
            train, test = load_trials(s.train_file), load_trials(s.test_file)
            try:
                check_pair(train, test)
            except ConfigError as e:
                problems += [f"{tag}: {p}" for p in e.problems]
            problems += _check_filter(cfg, train, tag)
            loaded.append((s, train, test))
        if problems:
            raise ConfigError("data does not match the run config", problems)

        out = []
        for s, train, test in loaded:
            train, test = preprocess(train, cfg), preprocess(test, cfg)
            tag = f"subject {s.name}" if s.name else "data"
            problems += [f"{tag}: {p}" for p in train_cfg.build_arch(train).problems()]
            out.append((s, train, test))
        if problems:
            raise ConfigError("architecture does not fit the data", problems)
        return out

    # train ------------------------------------------------------------------------

    def _run_variant(
        self, data, train_cfg: TrainConfig, seeds: Sequence[int]
    ) -> Tuple[MetricsReport, List[Tuple[Subject, SeedRun]]]:
        runs: List[Tuple[Subject, SeedRun]] = []
        for subject, train, test in data:
            for run in run_seeds(train, test, train_cfg, seeds, self.n_jobs, subject=subject.name or None):
                runs.append((subject, run))
        return report_from_runs(train_cfg.variant, [r for _, r in runs]), runs

    def _write_histories(self, runs: Sequence[Tuple[Subject, SeedRun]], root: Path) -> None:
        for subject, run in runs:
            folder = root / subject.name if subject.name else root
            run.history.write_csv(folder / f"seed_{run.seed}.csv")

    def _write_best_checkpoints(self, runs: Sequence[Tuple[Subject, SeedRun]], root: Path) -> List[str]:
        written = []
        by_subject: Dict[str, List[SeedRun]] = {}
        for subject, run in runs:
            by_subject.setdefault(subject.name, []).append(run)
        for name, seed_runs in by_subject.items():
            # first listed seed wins ties
            best = max(seed_runs, key=lambda r: r.metrics.accuracy)
            path = (root / name / CHECKPOINT_NAME) if name else (root / CHECKPOINT_NAME)
            written.append(str(save_checkpoint(best.params, path)))
        return written

    def train(self, cfg: RunConfig) -> Dict[str, object]:
        with precision(cfg.precision):
            data = self.load_subjects(cfg.subjects, cfg.preprocess, cfg.train)
            out = self._ensure_out_dir()
            report, runs = self._run_variant(data, cfg.train, cfg.seeds)
            self._write_histories(runs, out / HISTORY_DIR)
            checkpoints = self._write_best_checkpoints(runs, out)
        report.write_json(out / METRICS_NAME)
        (out / TABLE_NAME).write_text(render_table([{"variant": report.variant, **report.aggregate}]), encoding="utf-8")
        logger.info(
            "%s: accuracy %.4f ± %.4f over %d runs",
            report.variant, report.aggregate["acc_mean"], report.aggregate["acc_std"], len(report.per_seed),
        )
        return {"report": report, "checkpoints": checkpoints, "metrics_file": str(out / METRICS_NAME)}

    # ablate ----------------------------------------------------------------------------

    def ablate(self, cfg: RunConfig) -> Dict[str, object]:
        """Every variant on identical data and seeds, each compared against Full."""
        with precision(cfg.precision):
            data = self.load_subjects(cfg.subjects, cfg.preprocess, cfg.train)
            problems = []
            for variant in cfg.variants:
                for subject, train, _ in data:
                    tag = f"{variant}" + (f" / subject {subject.name}" if subject.name else "")
                    problems += [f"{tag}: {p}" for p in cfg.train.with_variant(variant).build_arch(train).problems()]
            if problems:
                raise ConfigError("architecture does not fit the data", problems)

            out = self._ensure_out_dir()
            reports: Dict[str, MetricsReport] = {}
            for variant in cfg.variants:
                report, runs = self._run_variant(data, cfg.train.with_variant(variant), cfg.seeds)
                self._write_histories(runs, out / HISTORY_DIR / variant)
                reports[variant] = report

        baseline = reports[FULL]
        rows = []
        for variant, report in reports.items():
            comparison = compare_reports(report, baseline)
            report.comparisons = [comparison]
            rows.append({"variant": variant, **report.aggregate, "p": comparison.p})
        payload = {
            "variants": {v: r.to_dict() for v, r in reports.items()},
            "table": rows,
        }
        (out / ABLATION_JSON).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / ABLATION_TABLE).write_text(render_table(rows), encoding="utf-8")
        return {"reports": reports, "table": render_table(rows), "ablation_file": str(out / ABLATION_JSON)}

    # export / eval -----------------------------------------------------------------------

    def _checkpoint_and_data(self, cfg: RunConfig) -> Tuple[StaFlowParams, TrialSet]:
        params = load_checkpoint(cfg.checkpoint)
        data = load_trials(cfg.data_file)
        problems = _check_filter(cfg.preprocess, data, "data")
        if problems:
            raise ConfigError("preprocessing does not fit the data", problems)
        return params, preprocess(data, cfg.preprocess)

    def export(self, cfg: RunConfig) -> Dict[str, object]:
        params, data = self._checkpoint_and_data(cfg)
        out = self._ensure_out_dir()
        weights = export_spatial_weights(params, data.channel_names, out)
        stages = export_stage_features(params, data, out)
        fisher = {"variant": params.arch.variant, "stages": {k: v.fisher for k, v in stages.items()}}
        if cfg.flow_only_stages and params.arch.variant == FULL:
            flow_only = export_stage_features(params, data, out / FLOW_ONLY, variant=FLOW_ONLY)
            fisher[FLOW_ONLY] = {k: v.fisher for k, v in flow_only.items()}
        (out / FISHER_NAME).write_text(json.dumps(fisher, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return {
            "spatial_weights": {k: list(v.shape) for k, v in weights.items()},
            "stages": {k: list(v.features.shape) for k, v in stages.items()},
            "fisher": fisher,
        }

    def evaluate_checkpoint(self, cfg: RunConfig) -> Dict[str, object]:
        params, data = self._checkpoint_and_data(cfg)
        per_seed = [evaluate(params, data)]
        report = MetricsReport(variant=params.arch.variant, per_seed=per_seed, aggregate=aggregate(per_seed))
        path = report.write_json(self._ensure_out_dir() / EVAL_NAME)
        return {"report": report, "metrics_file": str(path)}
