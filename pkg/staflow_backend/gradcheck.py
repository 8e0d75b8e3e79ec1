# staflow_backend/gradcheck.py
"""Central finite-difference checks for analytic gradients."""

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad

FD_STEP = 1e-5
GRAD_TOL = 1e-4
# below this combined magnitude, float64 round-off in the difference quotient dominates
_DENOM_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), _DENOM_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numerical_gradient(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    step: float = FD_STEP,
    indices: Optional[Sequence[tuple]] = None,
) -> np.ndarray:
    """Central differences of the scalar `fn()` w.r.t. `tensor`, perturbing in place.

    When `indices` is given only those coordinates are evaluated; the others are 0.
    """
    if not tensor.data.flags.c_contiguous:
        tensor.data = np.ascontiguousarray(tensor.data)
    grad = np.zeros_like(tensor.data, dtype=np.float64)
    flat = tensor.data.reshape(-1)
    positions = (
        range(flat.size)
        if indices is None
        else [np.ravel_multi_index(ix, tensor.shape) for ix in indices]
    )
    with no_grad():
        for pos in positions:
            original = flat[pos]
            flat[pos] = original + step
            plus = float(fn().data)
            flat[pos] = original - step
            minus = float(fn().data)
            flat[pos] = original
            grad.reshape(-1)[pos] = (plus - minus) / (2 * step)
    return grad


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Dict[str, Tensor],
    step: float = FD_STEP,
    max_checks: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, float]:
    """Compare backward() against finite differences for every named input.

    Returns the max relative error per input. With `max_checks`, at most that many
    randomly chosen coordinates per tensor are differenced.
    """
    for t in inputs.values():
        t.zero_grad()
    fn().backward()
    rng = rng or np.random.default_rng(0)
    errors = {}
    for name, t in inputs.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        if max_checks is None or t.size <= max_checks:
            numeric = numerical_gradient(fn, t, step)
            errors[name] = relative_error(analytic, numeric)
            continue
        picks = rng.choice(t.size, size=max_checks, replace=False)
        indices = [np.unravel_index(p, t.shape) for p in picks]
        numeric = numerical_gradient(fn, t, step, indices=indices)
        flat_a, flat_n = analytic.reshape(-1)[picks], numeric.reshape(-1)[picks]
        errors[name] = relative_error(flat_a, flat_n)
    return errors
