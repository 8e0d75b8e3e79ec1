"""
StaFlowNet: a State Encoder and a Flow Encoder whose outputs meet in a
three-level BiGRU pyramid, with the state vector gating every level
(X_mod = X_gru * (1 + tanh(LN(W_m X_state)))), followed by an MLP head.

Ablation variants
  Full         state-modulated pyramid
  StateOnly    state vector straight into the head
  FlowOnly     pyramid with the gate fixed to 1
  RandomState  gate driven by a fresh N(0, 1) vector per trial
  Concat       un-modulated pyramid with the state vector appended as one extra column
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import ops
from .errors import ConfigError, DimensionError, UsageError
from .tensor import Tensor, concatenate, default_dtype

logger = logging.getLogger(__name__)

FULL = "Full"
STATE_ONLY = "StateOnly"
FLOW_ONLY = "FlowOnly"
RANDOM_STATE = "RandomState"
CONCAT = "Concat"
VARIANTS = (FULL, STATE_ONLY, FLOW_ONLY, RANDOM_STATE, CONCAT)

_USES_STATE_ENCODER = {FULL, STATE_ONLY, CONCAT}
_USES_FLOW = {FULL, FLOW_ONLY, RANDOM_STATE, CONCAT}
_USES_GATE = {FULL, RANDOM_STATE}


@dataclass
class ArchConfig:
    n_channels: int
    n_timepoints: int
    n_classes: int
    state_dim: int = 80
    spatial_filters: int = 40
    temporal_kernel: int = 32
    flow_pool_kernel: int = 48
    flow_pool_stride: int = 32
    pyramid_lengths: Tuple[int, ...] = (16, 4, 1)
    gru_hidden: int = 40
    mlp_hidden: Tuple[int, ...] = (256, 128)
    encoder_dropout: float = 0.5
    head_dropout: float = 0.25
    variant: str = FULL
    share_modulation: bool = False

    def __post_init__(self):
        self.pyramid_lengths = tuple(int(t) for t in self.pyramid_lengths)
        self.mlp_hidden = tuple(int(w) for w in self.mlp_hidden)

    @property
    def conv_length(self) -> int:
        return self.n_timepoints - self.temporal_kernel + 1

    @property
    def flow_length(self) -> int:
        if self.conv_length < self.flow_pool_kernel:
            return 0
        return ops.pooled_length(self.conv_length, self.flow_pool_kernel, self.flow_pool_stride)

    @property
    def pyramid_total(self) -> int:
        return sum(self.pyramid_lengths)

    @property
    def min_timepoints(self) -> int:
        """Smallest T_in whose flow length reaches the first pyramid level."""
        first = self.pyramid_lengths[0] if self.pyramid_lengths else 1
        return self.temporal_kernel - 1 + self.flow_pool_kernel + (first - 1) * self.flow_pool_stride

    @property
    def head_inputs(self) -> int:
        if self.variant == STATE_ONLY:
            return self.state_dim
        if self.variant == CONCAT:
            return self.state_dim * (self.pyramid_total + 1)
        return self.state_dim * self.pyramid_total

    def problems(self) -> List[str]:
        out = []
        for name in ("n_channels", "n_timepoints", "state_dim", "spatial_filters",
                     "temporal_kernel", "flow_pool_kernel", "flow_pool_stride", "gru_hidden"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_classes < 2:
            out.append(f"n_classes must be >= 2, got {self.n_classes}")
        if self.variant not in VARIANTS:
            out.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.pyramid_lengths:
            out.append("pyramid_lengths must name at least one level")
        elif min(self.pyramid_lengths) < 1 or list(self.pyramid_lengths) != sorted(
            self.pyramid_lengths, reverse=True
        ):
            out.append(f"pyramid_lengths must be non-increasing and >= 1, got {self.pyramid_lengths}")
        if any(w < 1 for w in self.mlp_hidden):
            out.append(f"mlp_hidden widths must be >= 1, got {self.mlp_hidden}")
        for name in ("encoder_dropout", "head_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                out.append(f"{name} must lie in [0, 1), got {p}")
        if self.temporal_kernel > self.n_timepoints:
            out.append(
                f"temporal_kernel {self.temporal_kernel} exceeds n_timepoints {self.n_timepoints}"
            )
        if self.variant in _USES_FLOW and self.pyramid_lengths and self.flow_length < self.pyramid_lengths[0]:
            out.append(
                f"flow length {self.flow_length} is shorter than the first pyramid level "
                f"{self.pyramid_lengths[0]}; n_timepoints must be >= {self.min_timepoints}"
            )
        return out

    def validate(self) -> "ArchConfig":
        problems = self.problems()
        if problems:
            raise ConfigError("invalid architecture", problems)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pyramid_lengths"] = list(self.pyramid_lengths)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown architecture fields: {unknown}")
        return cls(**d)

    def with_variant(self, variant: str) -> "ArchConfig":
        return ArchConfig.from_dict({**self.to_dict(), "variant": variant})


@dataclass
class LevelParams:
    gru_forward: ops.GRUDirection
    gru_backward: ops.GRUDirection
    proj_weight: Tensor
    proj_bias: Tensor
    w_m: Optional[Tensor] = None
    ln_gamma: Optional[Tensor] = None
    ln_beta: Optional[Tensor] = None

    @property
    def modulated(self) -> bool:
        return self.w_m is not None


class StaFlowParams:
    """Learnable tensors (declaration order) plus BatchNorm running statistics."""

    def __init__(self, arch: ArchConfig, tensors: Dict[str, Tensor], buffers: Dict[str, np.ndarray]):
        self.arch = arch
        self.tensors = tensors
        self.buffers = buffers

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.tensors[name]
        except KeyError:
            raise ConfigError(
                f"parameter {name!r} missing for variant {self.arch.variant}"
            ) from None

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    def parameters(self) -> List[Tuple[str, Tensor]]:
        return list(self.tensors.items())

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def bn_state(self, prefix: str) -> ops.BatchNormState:
        return ops.BatchNormState(
            self.buffers[f"{prefix}.running_mean"], self.buffers[f"{prefix}.running_var"]
        )

    def level(self, i: int) -> LevelParams:
        p = f"smf{i}"

        def direction(d):
            return ops.GRUDirection(
                self[f"{p}.gru.{d}.w_ih"], self[f"{p}.gru.{d}.w_hh"],
                self[f"{p}.gru.{d}.b_ih"], self[f"{p}.gru.{d}.b_hh"],
            )

        level = LevelParams(direction("fwd"), direction("bwd"), self[f"{p}.proj.weight"], self[f"{p}.proj.bias"])
        gate = "smf" if self.arch.share_modulation else p
        if f"{gate}.W_m" in self.tensors:
            level.w_m = self[f"{gate}.W_m"]
            level.ln_gamma = self[f"{gate}.ln.gamma"]
            level.ln_beta = self[f"{gate}.ln.beta"]
        return level

    def snapshot(self) -> "StaFlowParams":
        """Deep copy detached from any graph (early-stopping checkpoints)."""
        tensors = {
            name: Tensor(t.data.copy(), requires_grad=t.requires_grad, dtype=t.dtype, name=name)
            for name, t in self.tensors.items()
        }
        return StaFlowParams(copy.deepcopy(self.arch), tensors, {k: v.copy() for k, v in self.buffers.items()})

    def load_from(self, other: "StaFlowParams") -> None:
        for name, t in self.tensors.items():
            t.data[...] = other.tensors[name].data
        for name, b in self.buffers.items():
            b[...] = other.buffers[name]


def layout(arch: ArchConfig) -> Tuple[List[Tuple[str, Tuple[int, ...]]], List[Tuple[str, Tuple[int, ...]]]]:
    """Names and shapes of every tensor and buffer, in declaration order."""
    C, D, S1, Kt, H = arch.n_channels, arch.state_dim, arch.spatial_filters, arch.temporal_kernel, arch.gru_hidden
    tensors: List[Tuple[str, Tuple[int, ...]]] = []
    buffers: List[Tuple[str, Tuple[int, ...]]] = []

    def encoder(prefix, spatial, temporal):
        tensors.extend([
            (f"{prefix}.{spatial}", (S1, 1, C, 1)),
            (f"{prefix}.{temporal}", (D, S1, 1, Kt)),
            (f"{prefix}.bn.gamma", (D,)),
            (f"{prefix}.bn.beta", (D,)),
        ])
        buffers.extend([(f"{prefix}.bn.running_mean", (D,)), (f"{prefix}.bn.running_var", (D,))])

    def gate(prefix):
        tensors.extend([(f"{prefix}.W_m", (D, D)), (f"{prefix}.ln.gamma", (D,)), (f"{prefix}.ln.beta", (D,))])

    if arch.variant in _USES_STATE_ENCODER:
        encoder("state", "W1", "W2")
    if arch.variant in _USES_FLOW:
        encoder("flow", "V1", "V2")
        if arch.variant in _USES_GATE and arch.share_modulation:
            gate("smf")
        for i in range(1, len(arch.pyramid_lengths) + 1):
            for d in ("fwd", "bwd"):
                tensors.extend([
                    (f"smf{i}.gru.{d}.w_ih", (3 * H, D)),
                    (f"smf{i}.gru.{d}.w_hh", (3 * H, H)),
                    (f"smf{i}.gru.{d}.b_ih", (3 * H,)),
                    (f"smf{i}.gru.{d}.b_hh", (3 * H,)),
                ])
            tensors.extend([(f"smf{i}.proj.weight", (D, 2 * H)), (f"smf{i}.proj.bias", (D,))])
            if arch.variant in _USES_GATE and not arch.share_modulation:
                gate(f"smf{i}")
    width = arch.head_inputs
    for j, hidden in enumerate(arch.mlp_hidden, 1):
        tensors.extend([
            (f"head.fc{j}.weight", (hidden, width)),
            (f"head.fc{j}.bias", (hidden,)),
            (f"head.bn{j}.gamma", (hidden,)),
            (f"head.bn{j}.beta", (hidden,)),
        ])
        buffers.extend([(f"head.bn{j}.running_mean", (hidden,)), (f"head.bn{j}.running_var", (hidden,))])
        width = hidden
    tensors.extend([("head.out.weight", (arch.n_classes, width)), ("head.out.bias", (arch.n_classes,))])
    return tensors, buffers


def _initial_value(
    name: str, shape: Tuple[int, ...], shapes: Dict[str, Tuple[int, ...]], arch: ArchConfig, rng: np.random.Generator
) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "W_m":
        # zero W_m: the gate starts at exactly 1
        return np.zeros(shape)
    if leaf == "gamma":
        return np.ones(shape)
    if leaf == "beta":
        return np.zeros(shape)
    if ".gru." in name:
        bound = 1.0 / np.sqrt(arch.gru_hidden)
        return rng.uniform(-bound, bound, size=shape)
    if leaf == "bias":
        fan_in = shapes[name[: -len("bias")] + "weight"][1]
    else:
        fan_in = int(np.prod(shape[1:]))
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(arch: ArchConfig, rng: np.random.Generator, dtype=None) -> StaFlowParams:
    arch.validate()
    dtype = np.dtype(dtype or default_dtype())
    tensor_layout, buffer_layout = layout(arch)
    shapes = dict(tensor_layout)
    tensors = {}
    for name, shape in tensor_layout:
        value = _initial_value(name, shape, shapes, arch, rng)
        tensors[name] = Tensor(value.astype(dtype), requires_grad=True, dtype=dtype, name=name)
    buffers = {
        name: (np.ones(shape, dtype=dtype) if name.endswith("running_var") else np.zeros(shape, dtype=dtype))
        for name, shape in buffer_layout
    }
    logger.debug("initialized %s params: %d tensors", arch.variant, len(tensors))
    return StaFlowParams(arch, tensors, buffers)


@dataclass
class ForwardTrace:
    x_state: Optional[Tensor] = None
    x_flow: Optional[Tensor] = None
    x_gru: List[Tensor] = field(default_factory=list)
    x_mod: List[Tensor] = field(default_factory=list)
    z: Optional[Tensor] = None
    logits: Optional[Tensor] = None

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        out = {}
        if self.x_state is not None:
            out["x_state"] = self.x_state.shape
        if self.x_flow is not None:
            out["x_flow"] = self.x_flow.shape
        for i, (g, m) in enumerate(zip(self.x_gru, self.x_mod), 1):
            out[f"x_gru{i}"] = g.shape
            out[f"x_mod{i}"] = m.shape
        if self.z is not None:
            out["z"] = self.z.shape
        if self.logits is not None:
            out["logits"] = self.logits.shape
        return out


def temporal_difference(X: Tensor) -> Tensor:
    """First difference along time with a zero first column."""
    if X.ndim != 3:
        raise DimensionError(f"expected (B, C, T_in), got {X.shape}")
    B, C, T = X.shape
    head = Tensor(np.zeros((B, C, 1), dtype=X.dtype), dtype=X.dtype)
    if T == 1:
        return head
    return concatenate([head, X[:, :, 1:] - X[:, :, :-1]], axis=2)


def _check_input(X: Tensor, arch: ArchConfig) -> None:
    if X.ndim != 3:
        raise DimensionError(f"expected trials shaped (B, C, T_in), got {X.shape}")
    if X.shape[1] != arch.n_channels:
        raise DimensionError(
            f"input channel axis 1 = {X.shape[1]} but parameters expect {arch.n_channels} channels"
        )


def _encoder_trunk(X: Tensor, params: StaFlowParams, prefix: str, spatial: str, temporal: str, mode: str) -> Tensor:
    B, C, T = X.shape
    h = ops.conv2d(X.reshape(B, 1, C, T), params[f"{prefix}.{spatial}"])
    h = ops.conv2d(h, params[f"{prefix}.{temporal}"])
    h = ops.batch_norm(h, params[f"{prefix}.bn.gamma"], params[f"{prefix}.bn.beta"], params.bn_state(f"{prefix}.bn"), mode)
    return ops.elu(h)


def state_encoder_forward(
    X: Tensor, params: StaFlowParams, mode: str, rng: Optional[np.random.Generator] = None
) -> Tensor:
    """(B, C, T_in) -> X_state (B, D)."""
    _check_input(X, params.arch)
    h = _encoder_trunk(X, params, "state", "W1", "W2", mode)
    h = ops.adaptive_avg_pool2d(h, (1, 1))
    h = ops.dropout(h, params.arch.encoder_dropout, mode, rng)
    return h.reshape(X.shape[0], params.arch.state_dim)


def flow_encoder_forward(
    X: Tensor, params: StaFlowParams, mode: str, rng: Optional[np.random.Generator] = None
) -> Tensor:
    """(B, C, T_in) -> X_flow (B, D, T)."""
    arch = params.arch
    _check_input(X, arch)
    T = ops.pooled_length(X.shape[2] - arch.temporal_kernel + 1, arch.flow_pool_kernel, arch.flow_pool_stride)
    if X.shape[2] - arch.temporal_kernel + 1 < arch.flow_pool_kernel or T < arch.pyramid_lengths[0]:
        raise ConfigError(
            f"T_in = {X.shape[2]} gives a flow length below the first pyramid level "
            f"{arch.pyramid_lengths[0]}; T_in must be >= {arch.min_timepoints}"
        )
    h = _encoder_trunk(temporal_difference(X), params, "flow", "V1", "V2", mode)
    h = ops.avg_pool2d(h, (1, arch.flow_pool_kernel), (1, arch.flow_pool_stride))
    h = ops.dropout(h, arch.encoder_dropout, mode, rng)
    return h.reshape(X.shape[0], arch.state_dim, h.shape[-1])


def modulation_gate(x_state: Tensor, level: LevelParams) -> Tensor:
    """m = tanh(LN(W_m x_state)), shape (B, D)."""
    return ops.tanh_act(ops.layer_norm(ops.linear(x_state, level.w_m), level.ln_gamma, level.ln_beta))


def smf_level_forward(
    x_prev: Tensor, x_state: Optional[Tensor], level: LevelParams, target: int
) -> Tuple[Tensor, Tensor]:
    """One pyramid level: BiGRU -> projection -> adaptive pool -> state gate."""
    B, D, L = x_prev.shape
    if L < target:
        raise DimensionError(f"pyramid level input length {L} is shorter than its target {target}")
    seq = ops.bigru(x_prev.transpose(0, 2, 1), level.gru_forward, level.gru_backward)
    projected = ops.linear(seq, level.proj_weight, level.proj_bias)
    x_gru = ops.adaptive_avg_pool(projected.transpose(0, 2, 1), target)
    if x_state is None or not level.modulated:
        return x_gru, x_gru
    m = modulation_gate(x_state, level)
    return x_gru, x_gru * (1.0 + m.reshape(B, D, 1))


def _mlp_head(features: Tensor, params: StaFlowParams, mode: str, rng) -> Tensor:
    h = features
    for j in range(1, len(params.arch.mlp_hidden) + 1):
        h = ops.linear(h, params[f"head.fc{j}.weight"], params[f"head.fc{j}.bias"])
        h = ops.batch_norm(h, params[f"head.bn{j}.gamma"], params[f"head.bn{j}.beta"], params.bn_state(f"head.bn{j}"), mode)
        h = ops.dropout(ops.elu(h), params.arch.head_dropout, mode, rng)
    return ops.linear(h, params["head.out.weight"], params["head.out.bias"])


def fuse_and_classify(
    levels: Sequence[Tensor],
    params: StaFlowParams,
    mode: str,
    rng: Optional[np.random.Generator] = None,
    x_state: Optional[Tensor] = None,
) -> Tuple[Tensor, Tensor]:
    """Concatenate level outputs along time into Z and classify; returns (logits, Z).

    With `x_state` given (Concat variant) the state vector is appended to Z as one
    extra time column before flattening.
    """
    expected = params.arch.pyramid_lengths
    if len(levels) != len(expected):
        raise UsageError(f"expected {len(expected)} pyramid levels, got {len(levels)}")
    for i, (lvl, t) in enumerate(zip(levels, expected), 1):
        if lvl.shape[-1] != t:
            raise UsageError(f"pyramid level {i} has length {lvl.shape[-1]}, expected {t}")
    z = ops.concat_time(levels)
    fused = z if x_state is None else concatenate([z, x_state.reshape(x_state.shape[0], -1, 1)], axis=2)
    flat = fused.reshape(fused.shape[0], fused.shape[1] * fused.shape[2])
    return _mlp_head(flat, params, mode, rng), z


def _check_variant(params: StaFlowParams, variant: str) -> None:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    wanted = params.arch.with_variant(variant)
    missing = [name for name, _ in layout(wanted)[0] if name not in params.tensors]
    if missing:
        raise ConfigError(
            f"parameters built for {params.arch.variant} cannot run {variant}: missing {missing[:4]}"
            + (" ..." if len(missing) > 4 else "")
        )
    width = params["head.fc1.weight"].shape[1] if params.arch.mlp_hidden else params["head.out.weight"].shape[1]
    if width != wanted.head_inputs:
        raise ConfigError(
            f"classifier expects {width} inputs but {variant} produces {wanted.head_inputs}"
        )


def forward(
    X: Tensor,
    params: StaFlowParams,
    mode: str = ops.EVAL,
    rng: Optional[np.random.Generator] = None,
    trace: bool = False,
    variant: Optional[str] = None,
) -> Tuple[Tensor, Optional[ForwardTrace]]:
    """Full forward pass; `variant` defaults to the one the params were built for."""
    variant = variant or params.arch.variant
    if variant != params.arch.variant:
        _check_variant(params, variant)
    _check_input(X, params.arch)
    tr = ForwardTrace() if trace else None

    if variant == STATE_ONLY:
        x_state = state_encoder_forward(X, params, mode, rng)
        logits = _mlp_head(x_state, params, mode, rng)
        if tr is not None:
            tr.x_state, tr.logits = x_state, logits
        return logits, tr

    x_flow = flow_encoder_forward(X, params, mode, rng)
    x_state = None
    if variant in (FULL, CONCAT):
        x_state = state_encoder_forward(X, params, mode, rng)
    elif variant == RANDOM_STATE:
        if rng is None:
            raise UsageError("RandomState needs a generator to draw the state vector")
        noise = rng.standard_normal((X.shape[0], params.arch.state_dim))
        x_state = Tensor(noise.astype(X.dtype), dtype=X.dtype)

    gate_state = x_state if variant in _USES_GATE else None
    current = x_flow
    grus, mods = [], []
    for i, target in enumerate(params.arch.pyramid_lengths, 1):
        level = params.level(i)
        if gate_state is None:
            level.w_m = None
        x_gru, current = smf_level_forward(current, gate_state, level, target)
        grus.append(x_gru)
        mods.append(current)

    logits, z = fuse_and_classify(mods, params, mode, rng, x_state=x_state if variant == CONCAT else None)
    if tr is not None:
        tr.x_state, tr.x_flow, tr.x_gru, tr.x_mod, tr.z, tr.logits = x_state, x_flow, grus, mods, z, logits
    return logits, tr


def export_spatial_weights(
    params: StaFlowParams,
    channel_names: Optional[Sequence[str]] = None,
    out_dir: Optional[Path] = None,
) -> Dict[str, np.ndarray]:
    """Spatial kernels as filter x channel matrices; CSVs written when `out_dir` is set."""
    matrices = {}
    for branch, key in (("state", "state.W1"), ("flow", "flow.V1")):
        if key in params:
            kernel = params.tensors[key].data
            matrices[branch] = kernel.reshape(kernel.shape[0], kernel.shape[2]).copy()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        n_ch = params.arch.n_channels
        names = list(channel_names) if channel_names else [f"ch{i}" for i in range(n_ch)]
        if len(names) != n_ch:
            raise DimensionError(f"{len(names)} channel names for {n_ch} channels")
        for branch, matrix in matrices.items():
            path = out_dir / f"{branch}_spatial_weights.csv"
            pd.DataFrame(matrix, columns=names).to_csv(path, index=False)
            logger.info("wrote %s (%d filters x %d channels)", path, *matrix.shape)
    return matrices


def load_spatial_weights(path, dtype=np.float32) -> Tuple[np.ndarray, List[str]]:
    frame = pd.read_csv(path)
    return frame.to_numpy(dtype=np.float64).astype(dtype), list(frame.columns)
