# staflow_backend/optim.py
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

from .errors import NumericalError, UsageError
from .tensor import Tensor


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name, plus the step count."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def check_finite(grads: Mapping[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NumericalError(f"non-finite gradient for {name!r} ({bad} of {np.size(g)} entries are NaN/Inf)")


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    t: int,
    cfg: AdamConfig = AdamConfig(),
) -> AdamState:
    """One bias-corrected Adam update, in place on `params` and `state`.

    Gradients are checked before anything is touched, so a NaN abort leaves
    parameters and moments as they were.
    """
    if t < 1:
        raise UsageError(f"Adam step count starts at 1, got {t}")
    check_finite(grads)
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name, theta in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        theta -= (cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(theta.dtype, copy=False)
    state.t = t
    return state


class Adam:
    """Adam over named autodiff tensors; a tensor without a gradient is left alone, moments included."""

    def __init__(self, named_params: Iterable[Tuple[str, Tensor]], cfg: AdamConfig = AdamConfig()):
        self.params = dict(named_params)
        self.cfg = cfg
        self.state = AdamState()

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def step(self) -> None:
        live = {name: t for name, t in self.params.items() if t.grad is not None}
        grads = {name: t.grad for name, t in live.items()}
        data = {name: t.data for name, t in live.items()}
        adam_step(data, grads, self.state, self.state.t + 1, self.cfg)
