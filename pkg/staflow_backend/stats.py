# staflow_backend/stats.py
"""Paired Wilcoxon signed-rank test with an exact null for small samples."""

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .errors import DataError

EXACT_MAX_N = 20
# accuracy fractions like 0.95 - 0.90 and 0.75 - 0.70 must compare equal
DIFF_DECIMALS = 12


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # min(W+, W-)
    p_value: float
    w_plus: float
    w_minus: float
    n: int  # non-zero differences
    all_zero: bool
    method: str  # "exact" | "normal" | "none"

    def to_dict(self) -> dict:
        return asdict(self)


def exact_null_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    """counts[s] = number of sign assignments whose doubled W+ equals s."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def _exact_p(ranks: np.ndarray, w_plus: float) -> float:
    # ranks are multiples of 0.5 (average ranks), so doubling makes them integral
    doubled = np.rint(2 * ranks).astype(np.int64)
    counts = exact_null_counts(doubled)
    total = int(doubled.sum())
    observed = abs(int(round(2 * w_plus)) * 2 - total)
    sums = np.arange(total + 1)
    extreme = np.abs(2 * sums - total) >= observed
    return float(counts[extreme].sum() / counts.sum())


def _normal_p(ranks: np.ndarray, w_plus: float) -> float:
    n = ranks.size
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_sizes**3 - tie_sizes)) / 48.0
    if var <= 0:
        return 1.0
    z = (w_plus - mean) / np.sqrt(var)
    return float(min(1.0, 2.0 * norm.sf(abs(z))))


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> WilcoxonResult:
    """Two-sided test of a vs b. Zero differences are dropped before ranking."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise DataError(f"paired samples differ in length: {a.size} vs {b.size}")
    if a.size < 1:
        raise DataError("Wilcoxon test needs at least one pair")
    d = np.round(a - b, DIFF_DECIMALS)
    d = d[d != 0]
    if d.size == 0:
        return WilcoxonResult(0.0, 1.0, 0.0, 0.0, 0, True, "none")
    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    if d.size <= EXACT_MAX_N:
        p, method = _exact_p(ranks, w_plus), "exact"
    else:
        p, method = _normal_p(ranks, w_plus), "normal"
    return WilcoxonResult(min(w_plus, w_minus), p, w_plus, w_minus, int(d.size), False, method)


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""
