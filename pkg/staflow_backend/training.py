# staflow_backend/training.py
"""
Mini-batch Adam training with validation-loss early stopping, and the
multi-seed protocol (train + evaluate once per seed, then aggregate).

Every random draw in a run comes from one SeedSequence(seed), spawned into
independent streams for the validation split, initialization, shuffling,
dropout and the state vectors RandomState draws while validating, so a
(seed, data, config) triple always yields the same parameters.
"""

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.model_selection import train_test_split
from threadpoolctl import threadpool_limits
from tqdm import tqdm

from . import ops, settings
from .errors import ConfigError, DataError, NumericalError
from .metrics import MetricsReport, SeedMetrics, aggregate, evaluate, subject_means
from .model import FULL, VARIANTS, ArchConfig, StaFlowParams, forward, init_params
from .optim import Adam, AdamConfig
from .tensor import Tensor, default_dtype, no_grad
from .trials import TrialSet

logger = logging.getLogger(__name__)

DEFAULT_N_SEEDS = 10
# architecture fields that always come from the data
DATA_FIELDS = ("n_channels", "n_timepoints", "n_classes", "variant")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 1000
    patience: int = 100
    batch_size: int = 64
    val_fraction: float = 0.2
    seed: int = 0
    variant: str = FULL
    arch: Dict[str, object] = field(default_factory=dict)

    def problems(self) -> List[str]:
        out = []
        if not self.lr > 0:
            out.append(f"lr must be > 0, got {self.lr}")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                out.append(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if not self.eps > 0:
            out.append(f"eps must be > 0, got {self.eps}")
        if self.max_epochs < 1:
            out.append(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            out.append(f"patience must be >= 1, got {self.patience}")
        elif self.patience > self.max_epochs:
            out.append(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        if self.batch_size < 2:
            out.append(f"batch_size must be >= 2 (train-mode batch norm), got {self.batch_size}")
        if not 0.0 < self.val_fraction < 1.0:
            out.append(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.variant not in VARIANTS:
            out.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        known = {f.name for f in fields(ArchConfig)} - set(DATA_FIELDS)
        unknown = sorted(set(self.arch) - known)
        if unknown:
            out.append(f"unknown arch fields: {unknown}")
        return out

    def validate(self) -> "TrainConfig":
        problems = self.problems()
        if problems:
            raise ConfigError("invalid training config", problems)
        return self

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.lr, self.beta1, self.beta2, self.eps)

    def build_arch(self, data: TrialSet) -> ArchConfig:
        return ArchConfig(
            n_channels=data.n_channels,
            n_timepoints=data.n_samples,
            n_classes=data.n_classes,
            variant=self.variant,
            **self.arch,
        )

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=int(seed))

    def with_variant(self, variant: str) -> "TrainConfig":
        return replace(self, variant=variant)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    rows: List[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["epoch", "train_loss", "val_loss", "val_acc"])

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.8g")
        return path


@dataclass
class SeedRun:
    seed: int
    params: StaFlowParams
    history: TrainHistory
    metrics: SeedMetrics


def minibatches(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    """Consecutive slices of `order`; a trailing batch of one trial joins the previous batch."""
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def stratified_split(labels: np.ndarray, val_fraction: float, seed_seq: np.random.SeedSequence):
    indices = np.arange(labels.shape[0])
    try:
        train_idx, val_idx = train_test_split(
            indices,
            test_size=val_fraction,
            stratify=labels,
            random_state=int(seed_seq.generate_state(1)[0]),
        )
    except ValueError as e:
        raise DataError(f"not enough trials for a stratified {val_fraction:.0%} validation split: {e}") from e
    return np.sort(train_idx), np.sort(val_idx)


def _validation_pass(
    params: StaFlowParams,
    data: TrialSet,
    idx: np.ndarray,
    batch_size: int,
    rng: Optional[np.random.Generator] = None,
):
    total_loss, correct = 0.0, 0
    with no_grad():
        for start in range(0, len(idx), max(batch_size, 1)):
            batch = idx[start : start + batch_size]
            X = Tensor(data.data[batch], dtype=params.dtype)
            logits, _ = forward(X, params, ops.EVAL, rng=rng)
            loss = ops.softmax_cross_entropy(logits, data.labels[batch])
            total_loss += float(loss.data) * len(batch)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == data.labels[batch]))
    return total_loss / len(idx), correct / len(idx)


def train_model(train: TrialSet, cfg: TrainConfig, label: str = ""):
    """Fit one model; returns (parameters from the best-validation epoch, history)."""
    cfg.validate()
    present = np.unique(train.labels)
    if present.size < 2:
        raise DataError(f"training data holds a single class ({present.tolist()}); need at least two")
    arch = cfg.build_arch(train).validate()

    split_ss, init_ss, shuffle_ss, dropout_ss, val_ss = np.random.SeedSequence(cfg.seed).spawn(5)
    train_idx, val_idx = stratified_split(train.labels, cfg.val_fraction, split_ss)
    if cfg.batch_size > len(train_idx):
        raise ConfigError(
            f"batch_size {cfg.batch_size} exceeds the {len(train_idx)} trials left for training after the validation split"
        )
    if len(train_idx) < 2:
        raise DataError("need at least two training trials after the validation split")

    params = init_params(arch, np.random.default_rng(init_ss), dtype=default_dtype())
    optimizer = Adam(params.parameters(), cfg.adam)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)
    history = TrainHistory()
    best: Optional[StaFlowParams] = None
    wait = 0

    epochs = tqdm(
        range(1, cfg.max_epochs + 1),
        desc=label or f"{cfg.variant} seed {cfg.seed}",
        disable=not settings.SHOW_PROGRESS,
        leave=False,
    )
    for epoch in epochs:
        running = 0.0
        for batch in minibatches(train_idx[shuffle_rng.permutation(len(train_idx))], cfg.batch_size):
            X = Tensor(train.data[batch], dtype=params.dtype)
            logits, _ = forward(X, params, ops.TRAIN, rng=dropout_rng)
            loss = ops.softmax_cross_entropy(logits, train.labels[batch])
            if not np.isfinite(loss.data):
                raise NumericalError(f"non-finite training loss at epoch {epoch} (seed {cfg.seed})")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            running += float(loss.data) * len(batch)

        # RandomState sees the same draws every epoch
        val_loss, val_acc = _validation_pass(
            params, train, val_idx, cfg.batch_size, rng=np.random.default_rng(val_ss)
        )
        if not np.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch} (seed {cfg.seed})")
        history.rows.append(
            {"epoch": epoch, "train_loss": running / len(train_idx), "val_loss": val_loss, "val_acc": val_acc}
        )
        logger.debug("epoch %d train_loss=%.4f val_loss=%.4f val_acc=%.3f", epoch, running / len(train_idx), val_loss, val_acc)
        epochs.set_postfix(val_loss=f"{val_loss:.4f}", val_acc=f"{val_acc:.3f}")

        if val_loss < history.best_val_loss:
            history.best_val_loss, history.best_epoch = val_loss, epoch
            best = params.snapshot()
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                history.stopped_early = True
                logger.info(
                    "early stop at epoch %d (seed %d), best epoch %d val_loss=%.4f",
                    epoch, cfg.seed, history.best_epoch, history.best_val_loss,
                )
                break
    return best, history


def default_seeds(cfg: TrainConfig, n: int = DEFAULT_N_SEEDS) -> List[int]:
    return list(range(cfg.seed, cfg.seed + n))


def _one_seed(train: TrialSet, test: TrialSet, cfg: TrainConfig, seed: int, subject: Optional[str]) -> SeedRun:
    params, history = train_model(train, cfg.with_seed(seed), label=f"{cfg.variant} seed {seed}")
    metrics = evaluate(params, test, seed=seed)
    metrics.best_epoch, metrics.epochs_run, metrics.subject = history.best_epoch, history.epochs_run, subject
    logger.info(
        "%s seed %d%s: acc=%.4f kappa=%.4f f1=%.4f (best epoch %d)",
        cfg.variant, seed, f" [{subject}]" if subject else "", metrics.accuracy, metrics.kappa,
        metrics.macro_f1, history.best_epoch,
    )
    return SeedRun(seed, params, history, metrics)


def run_seeds(
    train: TrialSet,
    test: TrialSet,
    cfg: TrainConfig,
    seeds: Optional[Sequence[int]] = None,
    n_jobs: Optional[int] = None,
    subject: Optional[str] = None,
) -> List[SeedRun]:
    """Train and evaluate once per seed; results keep the order of `seeds`."""
    cfg.validate()
    seeds = list(seeds) if seeds is not None else default_seeds(cfg)
    if not seeds:
        raise ConfigError("need at least one seed")
    check_pair(train, test)
    n_jobs = max(1, min(n_jobs or settings.THREADS, len(seeds)))
    # one BLAS thread per worker when seeds already run side by side
    with threadpool_limits(limits=1 if n_jobs > 1 else settings.THREADS):
        if n_jobs == 1:
            return [_one_seed(train, test, cfg, s, subject) for s in seeds]
        return Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_one_seed)(train, test, cfg, s, subject) for s in seeds
        )


def report_from_runs(variant: str, runs: Sequence[SeedRun]) -> MetricsReport:
    per_seed = [r.metrics for r in runs]
    report = MetricsReport(variant=variant, per_seed=per_seed, aggregate=aggregate(per_seed))
    if any(s.subject for s in per_seed):
        report.subjects = subject_means(per_seed)
    return report


def multi_seed_run(
    train: TrialSet,
    test: TrialSet,
    cfg: TrainConfig,
    seeds: Optional[Sequence[int]] = None,
    n_jobs: Optional[int] = None,
) -> MetricsReport:
    return report_from_runs(cfg.variant, run_seeds(train, test, cfg, seeds, n_jobs))


def check_pair(train: TrialSet, test: TrialSet) -> None:
    """Train and test sessions must share montage, length, rate and class count."""
    problems = []
    if train.n_channels != test.n_channels:
        problems.append(f"train has {train.n_channels} channels, test has {test.n_channels}")
    if train.n_samples != test.n_samples:
        problems.append(f"train trials have {train.n_samples} samples, test trials {test.n_samples}")
    if train.sample_rate_hz != test.sample_rate_hz:
        problems.append(f"train is sampled at {train.sample_rate_hz} Hz, test at {test.sample_rate_hz} Hz")
    if train.n_classes != test.n_classes:
        problems.append(f"train has {train.n_classes} classes, test has {test.n_classes}")
    if problems:
        raise ConfigError("train and test data are incompatible", problems)
