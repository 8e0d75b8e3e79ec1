# staflow_backend/tests/fixtures.py
"""Small shared builders so every test works on a reduced, fast architecture."""

import numpy as np

from staflow_backend.model import FULL, ArchConfig, init_params
from staflow_backend.synth import SynthSpec, synth_generate
from staflow_backend.training import TrainConfig

# T_in = 160 with K_t = 16 and pool 16/8 gives a flow length of 17
SMALL_ARCH = {
    "state_dim": 16,
    "spatial_filters": 4,
    "temporal_kernel": 16,
    "flow_pool_kernel": 16,
    "flow_pool_stride": 8,
    "pyramid_lengths": [16, 4, 1],
    "gru_hidden": 8,
    "mlp_hidden": [16],
}


def small_arch(variant: str = FULL, n_channels: int = 4, n_timepoints: int = 160, n_classes: int = 2, **kw) -> ArchConfig:
    return ArchConfig(n_channels, n_timepoints, n_classes, variant=variant, **{**SMALL_ARCH, **kw})


def small_params(variant: str = FULL, seed: int = 0, dtype=np.float64, **kw):
    return init_params(small_arch(variant, **kw), np.random.default_rng(seed), dtype=dtype)


def randomize_gates(params, seed: int = 1, scale: float = 0.3) -> None:
    """Give every W_m nonzero values so the gate is exercised."""
    rng = np.random.default_rng(seed)
    for name, t in params.tensors.items():
        if name.endswith("W_m"):
            t.data[...] = rng.normal(0.0, scale, size=t.shape)


def small_spec(seed: int = 0, trials_per_class: int = 10, **kw) -> SynthSpec:
    return SynthSpec(
        n_classes=2,
        trials_per_class=trials_per_class,
        n_channels=4,
        duration_s=0.64,
        sample_rate_hz=250.0,
        seed=seed,
        **kw,
    )


def small_trials(seed: int = 0, trials_per_class: int = 10, **kw):
    return synth_generate(small_spec(seed, trials_per_class, **kw))


def small_train_config(**kw) -> TrainConfig:
    base = {"max_epochs": 3, "patience": 2, "batch_size": 8, "arch": dict(SMALL_ARCH)}
    return TrainConfig(**{**base, **kw})
