# staflow_backend/synth.py
"""Seeded synthetic motor-imagery trials: a mu rhythm on every channel, suppressed
(event-related desynchronization) on each class's own channels in the second half."""

import logging
from dataclasses import dataclass, field, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .trials import TrialSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassPattern:
    channels: Tuple[int, ...]
    depth: float

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "depth": self.depth}


@dataclass
class SynthSpec:
    n_classes: int = 2
    trials_per_class: int = 100
    n_channels: int = 8
    duration_s: float = 4.0
    sample_rate_hz: float = 250.0
    rhythm_hz: float = 10.0
    rhythm_amplitude: float = 10.0
    noise_std: float = 5.0
    erd_depth: float = 0.8
    class_map: Optional[List[ClassPattern]] = None
    seed: int = 0
    channel_names: Optional[List[str]] = field(default=None)

    def __post_init__(self):
        if self.class_map is not None:
            self.class_map = [
                p if isinstance(p, ClassPattern) else ClassPattern(tuple(int(c) for c in p["channels"]), float(p["depth"]))
                for p in self.class_map
            ]

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    def patterns(self) -> List[ClassPattern]:
        """Explicit class map, or contiguous channel blocks at `erd_depth`."""
        if self.class_map is not None:
            return list(self.class_map)
        width = max(1, self.n_channels // (2 * self.n_classes))
        return [
            ClassPattern(tuple(range(k * width, (k + 1) * width)), self.erd_depth)
            for k in range(self.n_classes)
        ]

    def problems(self) -> List[str]:
        out = []
        if self.n_classes < 2:
            out.append(f"n_classes must be >= 2, got {self.n_classes}")
        if self.trials_per_class < 1:
            out.append(f"trials_per_class must be >= 1, got {self.trials_per_class}")
        if self.n_channels < 1:
            out.append(f"n_channels must be >= 1, got {self.n_channels}")
        if not self.sample_rate_hz > 0:
            out.append(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        elif self.n_samples < 2:
            out.append(f"duration_s {self.duration_s} gives fewer than 2 samples")
        elif not 0 < self.rhythm_hz < self.sample_rate_hz / 2:
            out.append(f"rhythm_hz must lie in (0, {self.sample_rate_hz / 2}), got {self.rhythm_hz}")
        if self.noise_std < 0:
            out.append(f"noise_std must be >= 0, got {self.noise_std}")
        if not 0.0 <= self.erd_depth <= 1.0:
            out.append(f"erd_depth must lie in [0, 1], got {self.erd_depth}")
        if self.class_map is not None and len(self.class_map) != self.n_classes:
            out.append(f"class_map has {len(self.class_map)} entries for {self.n_classes} classes")
        for k, p in enumerate(self.patterns()):
            if not p.channels:
                out.append(f"class {k}: empty channel subset")
            if any(c < 0 or c >= self.n_channels for c in p.channels):
                out.append(f"class {k}: channels {list(p.channels)} outside [0, {self.n_channels})")
            if not 0.0 <= p.depth <= 1.0:
                out.append(f"class {k}: ERD depth must lie in [0, 1], got {p.depth}")
        if self.channel_names is not None and len(self.channel_names) != self.n_channels:
            out.append(f"{len(self.channel_names)} channel names for {self.n_channels} channels")
        return out

    def validate(self) -> "SynthSpec":
        problems = self.problems()
        if problems:
            raise ConfigError("invalid synthetic data spec", problems)
        return self

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["class_map"] = [p.to_dict() for p in self.patterns()]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown synth fields: {unknown}")
        return cls(**d)

    def reseeded(self, seed: int) -> "SynthSpec":
        return SynthSpec.from_dict({**self.to_dict(), "seed": int(seed)})


def synth_generate(spec: SynthSpec) -> TrialSet:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_trials = spec.n_classes * spec.trials_per_class
    C, S = spec.n_channels, spec.n_samples

    labels = rng.permutation(np.repeat(np.arange(spec.n_classes), spec.trials_per_class))
    t = np.arange(S) / spec.sample_rate_hz
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(n_trials, C, 1))
    rhythm = spec.rhythm_amplitude * np.sin(2.0 * np.pi * spec.rhythm_hz * t + phase)

    envelope = np.ones((n_trials, C, S))
    second_half = t >= spec.duration_s / 2.0
    for k, pattern in enumerate(spec.patterns()):
        rows = np.flatnonzero(labels == k)
        envelope[np.ix_(rows, list(pattern.channels), np.flatnonzero(second_half))] = 1.0 - pattern.depth

    noise = rng.normal(0.0, spec.noise_std, size=(n_trials, C, S))
    data = (noise + rhythm * envelope).astype(np.float32)
    logger.debug("synthesized %d trials (%d classes, seed %d)", n_trials, spec.n_classes, spec.seed)
    return TrialSet(
        data,
        labels,
        spec.sample_rate_hz,
        spec.n_classes,
        spec.channel_names,
        {"synth_seed": spec.seed},
    )
