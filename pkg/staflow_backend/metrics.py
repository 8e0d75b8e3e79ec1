# staflow_backend/metrics.py
"""Classification metrics, class separability and the serialized MetricsReport."""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.metrics import accuracy_score, cohen_kappa_score, confusion_matrix, f1_score

from . import ops
from .errors import ConfigError, DataError, LabelRangeError
from .model import StaFlowParams, forward
from .stats import wilcoxon_signed_rank
from .tensor import Tensor, no_grad
from .trials import TrialSet

logger = logging.getLogger(__name__)

FISHER_EPS = 1e-12
EVAL_BATCH = 256


@dataclass
class SeedMetrics:
    seed: int
    accuracy: float
    kappa: float
    macro_f1: float
    confusion: List[List[int]]
    best_epoch: Optional[int] = None
    epochs_run: Optional[int] = None
    subject: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


def classification_scores(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> dict:
    """Accuracy, Cohen's kappa, macro F1 and the K x K confusion matrix (rows = true class)."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    labels = list(range(n_classes))
    cm = confusion_matrix(y_true, y_pred, labels=labels)
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = cohen_kappa_score(y_true, y_pred, labels=labels)
    # p_e = 1 (one class in truth and predictions) leaves kappa undefined; report no agreement beyond chance
    if not np.isfinite(kappa):
        kappa = 0.0
    return {
        "accuracy": float(accuracy_score(y_true, y_pred)),
        "kappa": float(kappa),
        "macro_f1": float(f1_score(y_true, y_pred, labels=labels, average="macro", zero_division=0)),
        "confusion": cm.astype(int).tolist(),
    }


def check_compatible(params: StaFlowParams, data: TrialSet) -> None:
    arch = params.arch
    problems = []
    if data.n_channels != arch.n_channels:
        problems.append(f"data has {data.n_channels} channels, model expects {arch.n_channels}")
    if data.n_samples != arch.n_timepoints:
        problems.append(f"data has {data.n_samples} samples per trial, model expects {arch.n_timepoints}")
    if data.n_classes != arch.n_classes:
        problems.append(f"data has {data.n_classes} classes, model was built for {arch.n_classes}")
    if problems:
        raise ConfigError("data does not fit the model", problems)
    if data.labels.size and data.labels.max() >= arch.n_classes:
        raise LabelRangeError(f"label {data.labels.max()} outside the model's {arch.n_classes} classes")


def predict_logits(params: StaFlowParams, data: TrialSet, rng=None, variant: Optional[str] = None) -> np.ndarray:
    """Eval-mode logits for every trial, batched, without building a graph."""
    check_compatible(params, data)
    out = []
    with no_grad():
        for start in range(0, data.n_trials, EVAL_BATCH):
            X = Tensor(data.data[start : start + EVAL_BATCH], dtype=params.dtype)
            logits, _ = forward(X, params, ops.EVAL, rng=rng, variant=variant)
            out.append(logits.data)
    if not out:
        return np.zeros((0, params.arch.n_classes), dtype=params.dtype)
    return np.concatenate(out)


def evaluate(params: StaFlowParams, test: TrialSet, seed: int = 0, rng=None) -> SeedMetrics:
    """Score a trained model; ties in the logits go to the lowest class index."""
    if test.n_trials == 0:
        raise DataError("cannot evaluate on an empty trial set")
    if rng is None:
        rng = np.random.default_rng(seed)
    logits = predict_logits(params, test, rng=rng)
    predictions = np.argmax(logits, axis=1)
    return SeedMetrics(seed=seed, **classification_scores(test.labels, predictions, params.arch.n_classes))


def fisher_score(features: np.ndarray, labels: Sequence[int], eps: float = FISHER_EPS) -> float:
    """trace(S_B) / (trace(S_W) + eps) over trials x features."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).reshape(-1)
    if X.ndim == 1:
        X = X[:, None]
    X = X.reshape(X.shape[0], -1)
    if X.shape[0] != y.shape[0]:
        raise DataError(f"{X.shape[0]} feature rows for {y.shape[0]} labels")
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise DataError("Fisher score needs at least two classes")
    if counts.min() < 2:
        raise DataError(
            f"Fisher score needs >= 2 trials per class; class {classes[np.argmin(counts)]} has {counts.min()}"
        )
    grand = X.mean(axis=0)
    between = within = 0.0
    for k in classes:
        Xk = X[y == k]
        mu = Xk.mean(axis=0)
        between += Xk.shape[0] * float(np.sum((mu - grand) ** 2))
        within += float(np.sum((Xk - mu) ** 2))
    return between / (within + eps)


@dataclass
class Comparison:
    variant: str
    baseline: str
    W: float
    p: float
    n: int
    all_zero: bool
    paired_on: str  # "subjects" | "seeds"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricsReport:
    variant: str
    per_seed: List[SeedMetrics] = field(default_factory=list)
    aggregate: Dict[str, float] = field(default_factory=dict)
    fisher: Dict[str, float] = field(default_factory=dict)
    comparisons: List[Comparison] = field(default_factory=list)
    subjects: Dict[str, Dict[str, float]] = field(default_factory=dict)

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([s.accuracy for s in self.per_seed])

    def best_seed(self) -> SeedMetrics:
        """Highest accuracy; the earliest listed seed wins ties."""
        return max(self.per_seed, key=lambda s: s.accuracy)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "per_seed": [s.to_dict() for s in self.per_seed],
            "aggregate": dict(self.aggregate),
            "fisher": dict(self.fisher),
            "comparisons": [c.to_dict() for c in self.comparisons],
            "subjects": {k: dict(v) for k, v in self.subjects.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            variant=d["variant"],
            per_seed=[SeedMetrics(**s) for s in d.get("per_seed", [])],
            aggregate=dict(d.get("aggregate", {})),
            fisher=dict(d.get("fisher", {})),
            comparisons=[Comparison(**c) for c in d.get("comparisons", [])],
            subjects={k: dict(v) for k, v in d.get("subjects", {}).items()},
        )

    def write_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def aggregate(per_seed: Sequence[SeedMetrics]) -> Dict[str, float]:
    """Mean and population std over seeds."""
    if not per_seed:
        raise DataError("no per-seed results to aggregate")
    out: Dict[str, float] = {"n_runs": len(per_seed)}
    for key, short in (("accuracy", "acc"), ("kappa", "kappa"), ("macro_f1", "f1")):
        values = np.array([getattr(s, key) for s in per_seed], dtype=np.float64)
        out[f"{short}_mean"] = float(values.mean())
        out[f"{short}_std"] = float(values.std(ddof=0))
    return out


def subject_means(per_seed: Sequence[SeedMetrics]) -> Dict[str, Dict[str, float]]:
    """Seed-averaged scores per subject, in first-seen order."""
    grouped: Dict[str, List[SeedMetrics]] = {}
    for s in per_seed:
        grouped.setdefault(s.subject or "default", []).append(s)
    return {name: aggregate(runs) for name, runs in grouped.items()}


def compare_reports(report: MetricsReport, baseline: MetricsReport) -> Comparison:
    """Wilcoxon of report vs baseline accuracy.

    Pairs per-subject means when both reports cover the same two or more
    subjects, per-seed accuracies otherwise (which requires identical seed lists).
    """
    if len(report.subjects) >= 2 and list(report.subjects) == list(baseline.subjects):
        a = [report.subjects[k]["acc_mean"] for k in report.subjects]
        b = [baseline.subjects[k]["acc_mean"] for k in baseline.subjects]
        paired_on = "subjects"
    else:
        seeds_a = [(s.subject, s.seed) for s in report.per_seed]
        seeds_b = [(s.subject, s.seed) for s in baseline.per_seed]
        if seeds_a != seeds_b:
            raise DataError(
                f"cannot pair {report.variant} with {baseline.variant}: seed lists differ"
            )
        a, b = report.accuracies, baseline.accuracies
        paired_on = "seeds"
    result = wilcoxon_signed_rank(a, b)
    return Comparison(
        variant=report.variant,
        baseline=baseline.variant,
        W=result.statistic,
        p=result.p_value,
        n=result.n,
        all_zero=result.all_zero,
        paired_on=paired_on,
    )
