# staflow_backend/preprocessing.py
"""Bandpass filtering, epoching and decimation of raw microvolt recordings."""

import logging
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from .errors import ConfigError, DataError
from .trials import TrialSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FilterSpec:
    order: int = 5
    low_hz: float = 4.0
    high_hz: float = 40.0

    def problems(self, sample_rate_hz: float) -> List[str]:
        out = []
        if self.order < 1:
            out.append(f"filter order must be >= 1, got {self.order}")
        nyquist = sample_rate_hz / 2.0
        if not 0 < self.low_hz < self.high_hz:
            out.append(f"filter band needs 0 < low_hz < high_hz, got [{self.low_hz}, {self.high_hz}]")
        if self.high_hz >= nyquist:
            out.append(f"high_hz {self.high_hz} must be below Nyquist ({nyquist} Hz at {sample_rate_hz} Hz)")
        return out

    def validate(self, sample_rate_hz: float) -> "FilterSpec":
        problems = self.problems(sample_rate_hz)
        if problems:
            raise ConfigError("invalid bandpass filter", problems)
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def design_sos(spec: FilterSpec, sample_rate_hz: float) -> np.ndarray:
    """Butterworth bandpass as second-order sections (bilinear transform, pre-warped edges)."""
    spec.validate(sample_rate_hz)
    return signal.butter(
        spec.order, [spec.low_hz, spec.high_hz], btype="bandpass", output="sos", fs=sample_rate_hz
    )


def frequency_response(spec: FilterSpec, sample_rate_hz: float, freqs: Sequence[float]) -> np.ndarray:
    """|H(f)| of the designed cascade at the given frequencies (Hz)."""
    sos = design_sos(spec, sample_rate_hz)
    _, h = signal.sosfreqz(sos, worN=np.asarray(freqs, dtype=np.float64), fs=sample_rate_hz)
    return np.abs(h)


def analytic_magnitude(spec: FilterSpec, sample_rate_hz: float, freqs: Sequence[float]) -> np.ndarray:
    """Analog Butterworth bandpass magnitude evaluated at the bilinear-warped frequencies."""
    spec.validate(sample_rate_hz)
    freqs = np.asarray(freqs, dtype=np.float64)

    def warp(f):
        return 2.0 * sample_rate_hz * np.tan(np.pi * f / sample_rate_hz)

    omega = warp(freqs)
    lo, hi = warp(spec.low_hz), warp(spec.high_hz)
    center_sq, bandwidth = lo * hi, hi - lo
    with np.errstate(divide="ignore", invalid="ignore"):
        prototype = np.abs(omega**2 - center_sq) / (np.abs(omega) * bandwidth)
        mag = 1.0 / np.sqrt(1.0 + prototype ** (2 * spec.order))
    # DC is a transmission zero
    return np.where(omega == 0, 0.0, mag)


def filter_array(
    data: np.ndarray, spec: FilterSpec, sample_rate_hz: float, zero_phase: bool = True
) -> np.ndarray:
    """Filter along the last axis, in float64, with zero initial conditions when causal."""
    sos = design_sos(spec, sample_rate_hz)
    x = np.asarray(data, dtype=np.float64)
    if not zero_phase:
        return signal.sosfilt(sos, x, axis=-1)
    default_pad = 3 * (2 * len(sos) + 1 - min((sos[:, 2] == 0).sum(), (sos[:, 5] == 0).sum()))
    padlen = min(default_pad, x.shape[-1] - 1)
    return signal.sosfiltfilt(sos, x, axis=-1, padlen=max(padlen, 0))


def bandpass_filter(trials: TrialSet, spec: FilterSpec = FilterSpec(), zero_phase: bool = True) -> TrialSet:
    out = filter_array(trials.data, spec, trials.sample_rate_hz, zero_phase)
    logger.debug(
        "bandpass %.1f-%.1f Hz order %d (%s) on %d trials",
        spec.low_hz, spec.high_hz, spec.order, "zero-phase" if zero_phase else "causal", trials.n_trials,
    )
    return trials.replace_data(out.astype(np.float32))


def epoch_extract(
    continuous: np.ndarray,
    cue_samples: Sequence[int],
    sample_rate_hz: float,
    window: Tuple[float, float] = (0.0, 4.0),
    labels: Optional[Sequence[int]] = None,
    n_classes: int = 0,
    channel_names: Optional[Sequence[str]] = None,
) -> TrialSet:
    """Cut [cue + t0*fs, cue + t1*fs) out of a (channels, samples) recording for every cue."""
    continuous = np.asarray(continuous)
    if continuous.ndim != 2:
        raise DataError(f"continuous recording must be (channels, samples), got {continuous.shape}")
    t0, t1 = window
    if not t1 > t0:
        raise ConfigError(f"epoch window must have t1 > t0, got [{t0}, {t1})")
    cues = [int(c) for c in cue_samples]
    if labels is None:
        raise DataError("epoch_extract needs one label per cue")
    if len(labels) != len(cues):
        raise DataError(f"{len(labels)} labels for {len(cues)} cues")
    start_off = int(round(t0 * sample_rate_hz))
    stop_off = int(round(t1 * sample_rate_hz))
    n_total = continuous.shape[1]
    for i, cue in enumerate(cues):
        start, stop = cue + start_off, cue + stop_off
        if start < 0 or stop > n_total:
            raise DataError(
                f"cue {i} at sample {cue}: window [{start}, {stop}) falls outside the recording of {n_total} samples"
            )
    epochs = np.stack([continuous[:, c + start_off : c + stop_off] for c in cues]) if cues else np.zeros(
        (0, continuous.shape[0], stop_off - start_off)
    )
    return TrialSet(epochs, np.asarray(labels), sample_rate_hz, n_classes, channel_names)


def decimate(trials: TrialSet, factor: int) -> TrialSet:
    """Anti-aliased integer downsampling; the new rate is fs / factor."""
    if isinstance(factor, bool) or int(factor) != factor or factor < 1:
        raise ConfigError(f"decimation factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    if factor == 1:
        return trials.replace_data(trials.data.copy())
    try:
        out = signal.decimate(trials.data.astype(np.float64), factor, axis=-1, zero_phase=True)
    except ValueError as e:
        raise DataError(f"cannot decimate {trials.n_samples}-sample trials by {factor}: {e}") from e
    logger.info("decimated %.1f Hz -> %.1f Hz", trials.sample_rate_hz, trials.sample_rate_hz / factor)
    return trials.replace_data(out.astype(np.float32), trials.sample_rate_hz / factor)


def band_power(data: np.ndarray, sample_rate_hz: float, band: Tuple[float, float]) -> np.ndarray:
    """Mean periodogram power inside [low, high] Hz along the last axis."""
    freqs, pxx = signal.periodogram(np.asarray(data, dtype=np.float64), fs=sample_rate_hz, axis=-1)
    mask = (freqs >= band[0]) & (freqs <= band[1])
    if not mask.any():
        raise ConfigError(f"band {band} holds no periodogram bins at {sample_rate_hz} Hz")
    return pxx[..., mask].mean(axis=-1)
