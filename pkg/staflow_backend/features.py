# staflow_backend/features.py
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from . import ops
from .errors import DataError
from .metrics import EVAL_BATCH, check_compatible, fisher_score
from .model import CONCAT, FULL, STATE_ONLY, StaFlowParams, forward
from .tensor import Tensor, no_grad
from .trials import TrialSet

logger = logging.getLogger(__name__)

_WITH_STATE_ENCODER = (FULL, STATE_ONLY, CONCAT)


@dataclass
class StageFeatures:
    stage: str
    features: np.ndarray  # trials x flattened features
    labels: np.ndarray
    fisher: Optional[float]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.features, columns=[f"f{i}" for i in range(self.features.shape[1])])
        frame["label"] = self.labels
        return frame


def stage_names(params: StaFlowParams, variant: Optional[str] = None) -> List[str]:
    variant = variant or params.arch.variant
    names = ["state"] if variant in _WITH_STATE_ENCODER else []
    if variant != STATE_ONLY:
        names += ["flow"] + [f"mod{i}" for i in range(1, len(params.arch.pyramid_lengths) + 1)] + ["Z"]
    return names


def export_stage_features(
    params: StaFlowParams,
    data: TrialSet,
    out_dir=None,
    variant: Optional[str] = None,
    seed: int = 0,
) -> Dict[str, StageFeatures]:
    """Flattened eval-mode activations per network stage, each with its Fisher score.

    With `out_dir`, writes one `{stage}_features.csv` per stage (rows = trials,
    last column = label).
    """
    check_compatible(params, data)
    variant = variant or params.arch.variant
    names = stage_names(params, variant)
    collected: Dict[str, List[np.ndarray]] = {name: [] for name in names}
    rng = np.random.default_rng(seed)
    with no_grad():
        for start in range(0, data.n_trials, EVAL_BATCH):
            X = Tensor(data.data[start : start + EVAL_BATCH], dtype=params.dtype)
            _, trace = forward(X, params, ops.EVAL, rng=rng, trace=True, variant=variant)
            B = X.shape[0]
            by_stage = {"state": trace.x_state, "flow": trace.x_flow, "Z": trace.z}
            by_stage.update({f"mod{i}": m for i, m in enumerate(trace.x_mod, 1)})
            for name in names:
                collected[name].append(by_stage[name].data.reshape(B, -1))

    out = {}
    for name in names:
        matrix = np.concatenate(collected[name]) if collected[name] else np.zeros((0, 0))
        try:
            score = fisher_score(matrix, data.labels)
        except DataError as e:
            logger.warning("no Fisher score for stage %s: %s", name, e)
            score = None
        out[name] = StageFeatures(name, matrix, data.labels.copy(), score)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, stage in out.items():
            path = out_dir / f"{name}_features.csv"
            stage.to_frame().to_csv(path, index=False, float_format="%.8g")
            logger.info("wrote %s (%d x %d), fisher=%s", path, *stage.features.shape, stage.fisher)
    return out
