# staflow_backend/trials.py
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DataError, LabelRangeError


@dataclass
class TrialSet:
    """EEG trials, trial-major (n_trials, n_channels, n_samples), microvolts."""

    data: np.ndarray
    labels: np.ndarray
    sample_rate_hz: float
    n_classes: int = 0
    channel_names: Optional[List[str]] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.data.ndim != 3:
            raise DataError(f"trial data must be (trials, channels, samples), got {self.data.shape}")
        if self.labels.shape[0] != self.data.shape[0]:
            raise DataError(f"{self.labels.shape[0]} labels for {self.data.shape[0]} trials")
        if self.data.shape[2] < 1:
            raise DataError("trials need at least one sample")
        if not self.sample_rate_hz > 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not self.n_classes:
            self.n_classes = int(self.labels.max()) + 1 if self.labels.size else 0
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise LabelRangeError(
                f"labels must lie in [0, {self.n_classes}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )
        if self.channel_names is not None:
            self.channel_names = [str(n) for n in self.channel_names]
            if len(self.channel_names) != self.n_channels:
                raise DataError(f"{len(self.channel_names)} channel names for {self.n_channels} channels")

    @property
    def n_trials(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, index) -> "TrialSet":
        return TrialSet(
            self.data[index], self.labels[index], self.sample_rate_hz,
            self.n_classes, self.channel_names, dict(self.meta),
        )

    def replace_data(self, data: np.ndarray, sample_rate_hz: Optional[float] = None) -> "TrialSet":
        return TrialSet(
            data, self.labels.copy(), sample_rate_hz or self.sample_rate_hz,
            self.n_classes, self.channel_names, dict(self.meta),
        )

    def same_as(self, other: "TrialSet") -> bool:
        """Field-by-field equality with bitwise-equal sample data."""
        return (
            self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
            and np.array_equal(self.labels, other.labels)
            and np.float32(self.sample_rate_hz) == np.float32(other.sample_rate_hz)
            and self.n_classes == other.n_classes
            and self.channel_names == other.channel_names
        )


def concat_trialsets(sets: Sequence[TrialSet]) -> TrialSet:
    """Join sessions recorded with the same montage and rate."""
    if not sets:
        raise DataError("no trial sets to concatenate")
    first = sets[0]
    for i, s in enumerate(sets[1:], 1):
        problems = []
        if s.n_channels != first.n_channels:
            problems.append(f"{s.n_channels} channels vs {first.n_channels}")
        if s.n_samples != first.n_samples:
            problems.append(f"{s.n_samples} samples vs {first.n_samples}")
        if s.sample_rate_hz != first.sample_rate_hz:
            problems.append(f"{s.sample_rate_hz} Hz vs {first.sample_rate_hz} Hz")
        if s.channel_names and first.channel_names and s.channel_names != first.channel_names:
            problems.append("channel names differ")
        if problems:
            raise DataError(f"session {i} is incompatible with session 0: " + "; ".join(problems))
    return TrialSet(
        np.concatenate([s.data for s in sets]),
        np.concatenate([s.labels for s in sets]),
        first.sample_rate_hz,
        max(s.n_classes for s in sets),
        first.channel_names,
    )
