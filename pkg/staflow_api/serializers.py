# staflow_api/serializers.py
"""
Run-config validation for the command layer.

A run config is one JSON object; command-line `--key value` overrides are
merged into it first (dotted keys reach into sections, values are JSON-decoded
when they parse). Schema and semantic problems are gathered together and raised
as a single ConfigError, so nothing long-running starts on a bad config.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from jsonschema import Draft202012Validator

from staflow_backend import settings
from staflow_backend.errors import ConfigError
from staflow_backend.model import FULL, VARIANTS
from staflow_backend.preprocessing import FilterSpec
from staflow_backend.synth import SynthSpec
from staflow_backend.training import DEFAULT_N_SEEDS, TrainConfig

FileList = Union[str, List[str]]

_POS_INT = {"type": "integer", "minimum": 1}
_NUMBER = {"type": "number"}
_FILES = {
    "oneOf": [
        {"type": "string", "minLength": 1},
        {"type": "array", "items": {"type": "string", "minLength": 1}, "minItems": 1},
    ]
}

ARCH_TYPES = {
    "state_dim": _POS_INT,
    "spatial_filters": _POS_INT,
    "temporal_kernel": _POS_INT,
    "flow_pool_kernel": _POS_INT,
    "flow_pool_stride": _POS_INT,
    "pyramid_lengths": {"type": "array", "items": _POS_INT, "minItems": 1},
    "gru_hidden": _POS_INT,
    "mlp_hidden": {"type": "array", "items": _POS_INT},
    "encoder_dropout": _NUMBER,
    "head_dropout": _NUMBER,
    "share_modulation": {"type": "boolean"},
}

TRAIN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "lr": _NUMBER,
        "beta1": _NUMBER,
        "beta2": _NUMBER,
        "eps": _NUMBER,
        "max_epochs": {"type": "integer"},
        "patience": {"type": "integer"},
        "batch_size": {"type": "integer"},
        "val_fraction": _NUMBER,
        "seed": {"type": "integer", "minimum": 0},
        "variant": {"enum": list(VARIANTS)},
        "arch": {"type": "object", "additionalProperties": False, "properties": ARCH_TYPES},
    },
}

SYNTH_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n_classes": {"type": "integer"},
        "trials_per_class": {"type": "integer"},
        "n_channels": {"type": "integer"},
        "duration_s": _NUMBER,
        "sample_rate_hz": _NUMBER,
        "rhythm_hz": _NUMBER,
        "rhythm_amplitude": _NUMBER,
        "noise_std": _NUMBER,
        "erd_depth": _NUMBER,
        "seed": {"type": "integer", "minimum": 0},
        "channel_names": {"type": ["array", "null"], "items": {"type": "string"}},
        "class_map": {
            "type": ["array", "null"],
            "items": {
                "type": "object",
                "required": ["channels", "depth"],
                "additionalProperties": False,
                "properties": {
                    "channels": {"type": "array", "items": {"type": "integer"}},
                    "depth": _NUMBER,
                },
            },
        },
    },
}

PREPROCESS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "bandpass": {
            "oneOf": [
                {"type": "null"},
                {"type": "boolean"},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"order": _POS_INT, "low_hz": _NUMBER, "high_hz": _NUMBER},
                },
            ]
        },
        "zero_phase": {"type": "boolean"},
        "decimate": _POS_INT,
    },
}

SUBJECTS_SCHEMA = {
    "type": "array",
    "minItems": 1,
    "items": {
        "type": "object",
        "required": ["name", "train_file", "test_file"],
        "additionalProperties": False,
        "properties": {"name": {"type": "string", "minLength": 1}, "train_file": _FILES, "test_file": _FILES},
    },
}

_COMMON = {
    "out_dir": {"type": "string", "minLength": 1},
    "precision": {"enum": ["single", "double"]},
}
_RUN = {
    **_COMMON,
    "train_file": _FILES,
    "test_file": _FILES,
    "subjects": SUBJECTS_SCHEMA,
    "preprocess": PREPROCESS_SCHEMA,
    "train": TRAIN_SCHEMA,
    "seeds": {
        "oneOf": [
            _POS_INT,
            {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        ]
    },
}
_FROM_CHECKPOINT = {
    **_COMMON,
    "checkpoint": {"type": "string", "minLength": 1},
    "data_file": _FILES,
    "preprocess": PREPROCESS_SCHEMA,
}


def _object(properties: dict, required: Sequence[str] = ()) -> dict:
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "type": "object",
        "additionalProperties": False,
        "required": list(required),
        "properties": properties,
    }


SCHEMAS: Dict[str, dict] = {
    "synth": _object({**_COMMON, "synth": SYNTH_SCHEMA}),
    "train": _object(_RUN),
    "ablate": _object(
        {**_RUN, "variants": {"type": "array", "items": {"enum": list(VARIANTS)}, "minItems": 1, "uniqueItems": True}}
    ),
    "export": _object({**_FROM_CHECKPOINT, "flow_only_stages": {"type": "boolean"}}, ["checkpoint", "data_file"]),
    "eval": _object(_FROM_CHECKPOINT, ["checkpoint", "data_file"]),
}


# overrides -------------------------------------------------------------------


def _decode(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_overrides(tokens: Sequence[str]) -> Dict[str, object]:
    """`--a.b 1 --flag --name x` -> {"a.b": 1, "flag": True, "name": "x"}."""
    out: Dict[str, object] = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or len(token) == 2:
            raise ConfigError(f"expected an override like --key value, got {token!r}")
        key = token[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            out[key] = _decode(raw)
            i += 1
        elif i + 1 < len(tokens) and not tokens[i + 1].startswith("--"):
            out[key] = _decode(tokens[i + 1])
            i += 2
        else:
            out[key] = True
            i += 1
    return out


def apply_overrides(config: dict, overrides: Dict[str, object]) -> dict:
    merged = json.loads(json.dumps(config))
    for dotted, value in overrides.items():
        node = merged
        parts = dotted.replace("-", "_").split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = node[part] = {}
            node = child
        node[parts[-1]] = value
    return merged


def load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


# validated config ---------------------------------------------------------------


@dataclass
class Subject:
    name: str
    train_file: FileList
    test_file: FileList


@dataclass
class PreprocessConfig:
    bandpass: Optional[FilterSpec] = None
    zero_phase: bool = True
    decimate: int = 1

    def to_dict(self) -> dict:
        return {
            "bandpass": self.bandpass.to_dict() if self.bandpass else None,
            "zero_phase": self.zero_phase,
            "decimate": self.decimate,
        }


@dataclass
class RunConfig:
    command: str
    out_dir: Path
    precision: str = settings.PRECISION
    synth: Optional[SynthSpec] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    subjects: List[Subject] = field(default_factory=list)
    seeds: List[int] = field(default_factory=list)
    variants: List[str] = field(default_factory=lambda: list(VARIANTS))
    checkpoint: Optional[Path] = None
    data_file: Optional[FileList] = None
    flow_only_stages: bool = True


def _path_list(value: FileList) -> List[str]:
    return [value] if isinstance(value, str) else list(value)


def _missing_files(label: str, value: Optional[FileList]) -> List[str]:
    if value is None:
        return []
    return [f"{label}: file not found: {p}" for p in _path_list(value) if not Path(p).is_file()]


def _schema_problems(command: str, raw: dict) -> List[str]:
    validator = Draft202012Validator(SCHEMAS[command])
    problems = []
    for err in sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path)):
        where = ".".join(str(p) for p in err.absolute_path) or "(config)"
        problems.append(f"{where}: {err.message}")
    return problems


def _preprocess(raw: dict) -> PreprocessConfig:
    bandpass = raw.get("bandpass")
    if bandpass is True:
        spec = FilterSpec()
    elif isinstance(bandpass, dict):
        spec = FilterSpec(**bandpass)
    else:
        spec = None
    return PreprocessConfig(spec, bool(raw.get("zero_phase", True)), int(raw.get("decimate", 1)))


def parse_run_config(command: str, raw: dict, overrides: Optional[Dict[str, object]] = None) -> RunConfig:
    """Validate `raw` (+ overrides) for `command`; every problem is reported at once."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}; expected one of {sorted(SCHEMAS)}")
    raw = apply_overrides(raw, overrides or {})
    problems = _schema_problems(command, raw)
    if problems:
        raise ConfigError(f"invalid {command} config", problems)

    cfg = RunConfig(
        command=command,
        out_dir=Path(raw.get("out_dir") or settings.OUT_DIR),
        precision=raw.get("precision", settings.PRECISION),
        preprocess=_preprocess(raw.get("preprocess", {})),
    )

    if command == "synth":
        cfg.synth = SynthSpec.from_dict(raw.get("synth", {}))
        problems += cfg.synth.problems()

    if command in ("train", "ablate"):
        cfg.train = TrainConfig(**raw.get("train", {}))
        problems += cfg.train.problems()
        if "subjects" in raw:
            if "train_file" in raw or "test_file" in raw:
                problems.append("give either subjects or train_file/test_file, not both")
            cfg.subjects = [Subject(**s) for s in raw["subjects"]]
            names = [s.name for s in cfg.subjects]
            if len(set(names)) != len(names):
                problems.append(f"subject names must be unique, got {names}")
        elif "train_file" in raw and "test_file" in raw:
            cfg.subjects = [Subject("", raw["train_file"], raw["test_file"])]
        else:
            problems.append("train_file and test_file (or a subjects list) are required")
        for s in cfg.subjects:
            tag = f"subject {s.name}" if s.name else "config"
            problems += _missing_files(f"{tag} train_file", s.train_file)
            problems += _missing_files(f"{tag} test_file", s.test_file)

        seeds = raw.get("seeds", DEFAULT_N_SEEDS)
        base = cfg.train.seed
        cfg.seeds = list(range(base, base + seeds)) if isinstance(seeds, int) else [int(s) for s in seeds]
        if len(set(cfg.seeds)) != len(cfg.seeds):
            problems.append(f"seeds must be distinct, got {cfg.seeds}")

    if command == "ablate":
        variants = raw.get("variants", list(VARIANTS))
        # Full is the comparison baseline and always runs first
        cfg.variants = [FULL] + [v for v in variants if v != FULL]

    if command in ("export", "eval"):
        cfg.checkpoint = Path(raw["checkpoint"])
        cfg.data_file = raw["data_file"]
        problems += _missing_files("checkpoint", raw["checkpoint"])
        problems += _missing_files("data_file", raw["data_file"])
        cfg.flow_only_stages = bool(raw.get("flow_only_stages", True))

    if problems:
        raise ConfigError(f"invalid {command} config", problems)
    return cfg
