"""
Neural-network operations on top of `Tensor`.

Heavy ops (convolution, pooling, cross-entropy, ELU, dropout) carry fused
backward closures; normalization and the GRU are composed from differentiable
primitives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, LabelRangeError, PrecisionError, UsageError
from .tensor import Tensor, concatenate, stack

TRAIN = "train"
EVAL = "eval"

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LN_EPS = 1e-5


def _check_mode(mode: str) -> bool:
    if mode not in (TRAIN, EVAL):
        raise UsageError(f"mode must be {TRAIN!r} or {EVAL!r}, got {mode!r}")
    return mode == TRAIN


def _same_precision(*tensors: Optional[Tensor]) -> None:
    dtypes = {t.dtype for t in tensors if t is not None}
    if len(dtypes) > 1:
        raise PrecisionError(f"mixed precision in one graph: {sorted(map(str, dtypes))}")


def _require_ndim(t: Tensor, ndim: int, what: str) -> None:
    if t.ndim != ndim:
        raise DimensionError(f"{what} must be {ndim}-D, got shape {t.shape}")


# convolution and pooling ---------------------------------------------------


def conv2d(input: Tensor, kernel: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Valid (unpadded) 2-D cross-correlation, NCHW input, OIHW kernel."""
    _require_ndim(input, 4, "conv2d input")
    _require_ndim(kernel, 4, "conv2d kernel")
    _same_precision(input, kernel, bias)
    B, Cin, H, W = input.shape
    Cout, kCin, kh, kw = kernel.shape
    if kCin != Cin:
        raise DimensionError(f"conv2d channel axis: input axis 1 = {Cin}, kernel axis 1 = {kCin}")
    if kh > H or kw > W:
        raise DimensionError(
            f"conv2d kernel ({kh},{kw}) exceeds input spatial axes 2,3 = ({H},{W})"
        )
    if bias is not None and bias.shape != (Cout,):
        raise DimensionError(f"conv2d bias must have shape ({Cout},), got {bias.shape}")

    x, k = input.data, kernel.data
    Ho, Wo = H - kh + 1, W - kw + 1
    out = np.zeros((B, Cout, Ho, Wo), dtype=x.dtype)
    # one (B,Ho,Wo,Cin) x (Cin,Cout) contraction per kernel tap keeps memory flat
    for u in range(kh):
        for v in range(kw):
            patch = x[:, :, u : u + Ho, v : v + Wo]
            out += np.moveaxis(np.tensordot(patch, k[:, :, u, v], axes=([1], [1])), -1, 1)
    if bias is not None:
        out += bias.data.reshape(1, Cout, 1, 1)

    def backward(g):
        gx = np.zeros_like(x)
        gk = np.zeros_like(k)
        for u in range(kh):
            for v in range(kw):
                patch = x[:, :, u : u + Ho, v : v + Wo]
                gk[:, :, u, v] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
                gx[:, :, u : u + Ho, v : v + Wo] += np.moveaxis(
                    np.tensordot(g, k[:, :, u, v], axes=([1], [0])), -1, 1
                )
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gk) if bias is None else (gx, gk, gb)

    parents = (input, kernel) if bias is None else (input, kernel, bias)
    return Tensor.from_op(out, parents, backward, "conv2d")


def pooled_length(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


def avg_pool2d(input: Tensor, kernel: Tuple[int, int], stride: Tuple[int, int]) -> Tensor:
    _require_ndim(input, 4, "avg_pool2d input")
    B, C, H, W = input.shape
    (ph, pw), (sh, sw) = kernel, stride
    if ph > H or pw > W:
        raise DimensionError(f"avg_pool2d kernel ({ph},{pw}) exceeds input axes 2,3 = ({H},{W})")
    if sh < 1 or sw < 1:
        raise ConfigError(f"avg_pool2d stride must be positive, got ({sh},{sw})")
    Ho, Wo = pooled_length(H, ph, sh), pooled_length(W, pw, sw)
    x = input.data
    windows = sliding_window_view(x, (ph, pw), axis=(2, 3))[:, :, ::sh, ::sw]
    out = windows.mean(axis=(-2, -1)).astype(x.dtype)
    scale = 1.0 / (ph * pw)

    def backward(g):
        gx = np.zeros_like(x)
        share = g * scale
        for u in range(ph):
            for v in range(pw):
                gx[:, :, u : u + sh * (Ho - 1) + 1 : sh, v : v + sw * (Wo - 1) + 1 : sw] += share
        return (gx,)

    return Tensor.from_op(out, (input,), backward, "avg_pool2d")


def adaptive_pool_matrix(length: int, target: int, dtype=np.float64) -> np.ndarray:
    """(length, target) averaging matrix; column i spans floor(i*L/T)..floor((i+1)*L/T)-1."""
    if not 1 <= target <= length:
        raise DimensionError(f"adaptive pool target {target} must lie in [1, {length}]")
    P = np.zeros((length, target), dtype=dtype)
    for i in range(target):
        start = (i * length) // target
        stop = ((i + 1) * length) // target
        P[start:stop, i] = 1.0 / (stop - start)
    return P


def adaptive_avg_pool(input: Tensor, target: int) -> Tensor:
    """Adaptive average pooling of the last axis down to `target` bins."""
    if input.ndim < 1:
        raise DimensionError("adaptive_avg_pool needs at least one axis")
    L = input.shape[-1]
    P = Tensor(adaptive_pool_matrix(L, target, input.dtype), dtype=input.dtype)
    if input.ndim == 1:
        return (input.reshape(1, L) @ P).reshape(target)
    return input @ P


def adaptive_avg_pool2d(input: Tensor, target: Tuple[int, int]) -> Tensor:
    th, tw = target
    pooled = adaptive_avg_pool(input, tw)
    axes = list(range(pooled.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return adaptive_avg_pool(pooled.transpose(axes), th).transpose(axes)


# normalization ----------------------------------------------------------------


@dataclass
class BatchNormState:
    """Running statistics, updated in place during train-mode forwards."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS


def batch_norm(
    input: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, mode: str
) -> Tensor:
    """Per-channel normalization over every axis except axis 1."""
    training = _check_mode(mode)
    if input.ndim < 2:
        raise DimensionError(f"batch_norm input needs shape (B, C, ...), got {input.shape}")
    C = input.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(
            f"batch_norm affine parameters must have shape ({C},), got {gamma.shape} / {beta.shape}"
        )
    _same_precision(input, gamma, beta)
    bshape = (1, C) + (1,) * (input.ndim - 2)
    axes = (0,) + tuple(range(2, input.ndim))

    if training:
        if input.shape[0] < 2:
            raise ConfigError("batch_norm in train mode needs a batch of at least 2 trials")
        mean = input.mean(axis=axes, keepdims=True)
        centered = input - mean
        var = (centered * centered).mean(axis=axes, keepdims=True)
        normed = centered / (var + state.eps) ** 0.5
        n = input.size // C
        m = state.momentum
        state.running_mean[...] = (1 - m) * state.running_mean + m * mean.data.reshape(C)
        state.running_var[...] = (1 - m) * state.running_var + m * var.data.reshape(C) * n / max(n - 1, 1)
    else:
        mean = state.running_mean.reshape(bshape).astype(input.dtype)
        inv_std = (1.0 / np.sqrt(state.running_var + state.eps)).reshape(bshape).astype(input.dtype)
        normed = (input - mean) * inv_std
    return normed * gamma.reshape(bshape) + beta.reshape(bshape)


def layer_norm(input: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    D = input.shape[-1]
    if gamma.shape != (D,) or beta.shape != (D,):
        raise DimensionError(
            f"layer_norm affine parameters must have shape ({D},), got {gamma.shape} / {beta.shape}"
        )
    _same_precision(input, gamma, beta)
    mean = input.mean(axis=-1, keepdims=True)
    centered = input - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps) ** 0.5 * gamma + beta


# dense layers ---------------------------------------------------------------------


def linear(input: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    _require_ndim(weight, 2, "linear weight")
    Dout, Din = weight.shape
    if input.shape[-1] != Din:
        raise DimensionError(
            f"linear: input last axis = {input.shape[-1]} but weight axis 1 = {Din}"
        )
    if bias is not None and bias.shape != (Dout,):
        raise DimensionError(f"linear bias must have shape ({Dout},), got {bias.shape}")
    _same_precision(input, weight, bias)
    if input.ndim == 1:
        out = (input.reshape(1, Din) @ weight.T).reshape(Dout)
    else:
        out = input @ weight.T
    return out if bias is None else out + bias


def dropout(input: Tensor, p: float, mode: str, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity in eval mode."""
    training = _check_mode(mode)
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return input
    if rng is None:
        raise UsageError("train-mode dropout needs a seeded generator")
    mask = (rng.random(input.shape) >= p).astype(input.dtype) / input.dtype.type(1.0 - p)
    return Tensor.from_op(input.data * mask, (input,), lambda g: (g * mask,), "dropout")


# activations ------------------------------------------------------------------------


def elu(input: Tensor, alpha: float = 1.0) -> Tensor:
    x = input.data
    negative = alpha * np.expm1(np.minimum(x, 0))
    out = np.where(x > 0, x, negative).astype(x.dtype)
    slope = np.where(x > 0, 1.0, negative + alpha).astype(x.dtype)
    return Tensor.from_op(out, (input,), lambda g: (g * slope,), "elu")


def tanh_act(input: Tensor) -> Tensor:
    return input.tanh()


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    _require_ndim(logits, 2, "softmax_cross_entropy logits")
    B, K = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != B:
        raise DimensionError(f"got {labels.shape[0]} labels for a batch of {B}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        bad = labels[(labels < 0) | (labels >= K)]
        raise LabelRangeError(f"labels {sorted(set(bad.tolist()))} outside [0, {K})")

    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(B)
    loss = np.asarray(-log_probs[rows, labels].mean(), dtype=z.dtype)

    def backward(g):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (grad * (g / B),)

    return Tensor.from_op(loss, (logits,), backward, "cross_entropy")


# recurrent ------------------------------------------------------------------------------


@dataclass
class GRUDirection:
    """Weights of one GRU direction; gate blocks are stacked in (r, z, n) order."""

    w_ih: Tensor  # (3H, Din)
    w_hh: Tensor  # (3H, H)
    b_ih: Tensor  # (3H,)
    b_hh: Tensor  # (3H,)

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[1]


def gru_direction(input: Tensor, weights: GRUDirection, reverse: bool = False) -> Tensor:
    """Run one direction over (B, L, Din); returns (B, L, H) in input time order."""
    B, L, _ = input.shape
    H = weights.hidden
    if weights.w_ih.shape != (3 * H, input.shape[-1]):
        raise DimensionError(
            f"GRU w_ih must be ({3 * H}, {input.shape[-1]}), got {weights.w_ih.shape}"
        )
    gates_in = linear(input, weights.w_ih, weights.b_ih)
    h = Tensor(np.zeros((B, H), dtype=input.dtype), dtype=input.dtype)
    steps = range(L - 1, -1, -1) if reverse else range(L)
    outputs = []
    for t in steps:
        gi = gates_in[:, t, :]
        gh = linear(h, weights.w_hh, weights.b_hh)
        r = (gi[:, :H] + gh[:, :H]).sigmoid()
        z = (gi[:, H : 2 * H] + gh[:, H : 2 * H]).sigmoid()
        n = (gi[:, 2 * H :] + r * gh[:, 2 * H :]).tanh()
        h = (1.0 - z) * n + z * h
        outputs.append(h)
    if reverse:
        outputs.reverse()
    return stack(outputs, axis=1)


def bigru(input: Tensor, forward: GRUDirection, backward: GRUDirection) -> Tensor:
    """Bidirectional GRU over (B, L, Din) with zero initial state -> (B, L, 2H)."""
    _require_ndim(input, 3, "bigru input")
    if input.shape[1] < 1:
        raise DimensionError("bigru needs at least one time step")
    return concatenate(
        [gru_direction(input, forward), gru_direction(input, backward, reverse=True)], axis=2
    )


def concat_time(levels: Sequence[Tensor]) -> Tensor:
    return concatenate(list(levels), axis=2)
