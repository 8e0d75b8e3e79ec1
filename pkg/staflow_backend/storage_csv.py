# staflow_backend/storage_csv.py
"""
Plain-CSV trial import.

The manifest is a JSON file next to the CSVs:

    {
      "sample_rate_hz": 250,
      "classes": ["left", "right"],        # optional, lets labels be names
      "n_classes": 2,                      # optional
      "channel_names": ["C3", "Cz", "C4"], # optional
      "trials": [{"file": "t000.csv", "label": 0}, ...]
    }

Every trial CSV has one row per channel and one column per sample, no header.
"""

import json
import logging
import re
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from .errors import CSVFormatError, DataError, LabelRangeError
from .trials import TrialSet

logger = logging.getLogger(__name__)

_PANDAS_LINE = re.compile(r"line (\d+)")


def read_trial_csv(path) -> np.ndarray:
    """One trial as a (channels, samples) float32 array."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"trial file not found: {path}")
    try:
        frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise CSVFormatError(path, 1, "file is empty") from None
    except pd.errors.ParserError as e:
        # pandas reports the 1-based physical line of the first over-long row
        m = _PANDAS_LINE.search(str(e))
        raise CSVFormatError(path, int(m.group(1)) if m else 0, f"ragged row ({e})") from None

    cells = frame.fillna("").apply(lambda col: col.str.strip())
    short = (cells == "").any(axis=1).to_numpy()
    if short.any():
        row = int(np.argmax(short))
        raise CSVFormatError(path, row + 1, f"ragged row: expected {frame.shape[1]} values")

    values = cells.apply(pd.to_numeric, errors="coerce")
    bad = values.isna().to_numpy()
    if bad.any():
        row, col = (int(i) for i in np.argwhere(bad)[0])
        raise CSVFormatError(
            path, row + 1, f"column {col + 1}: cannot parse {cells.iat[row, col]!r} as a number"
        )
    return values.to_numpy(dtype=np.float64).astype(np.float32)


def _resolve_label(raw, classes: Optional[List[str]], where: str) -> int:
    if isinstance(raw, bool):
        raise LabelRangeError(f"{where}: label {raw!r} is not a class")
    if isinstance(raw, int):
        return raw
    if isinstance(raw, str):
        if classes and raw in classes:
            return classes.index(raw)
        if raw.strip().lstrip("-").isdigit():
            return int(raw)
    raise LabelRangeError(f"{where}: unknown label {raw!r}")


def import_csv(directory, manifest) -> TrialSet:
    """Assemble a TrialSet from per-trial CSVs listed in `manifest`.

    `manifest` is a path (relative paths resolve against `directory`) or an
    already-parsed dict.
    """
    directory = Path(directory)
    if isinstance(manifest, dict):
        spec, manifest_path = manifest, directory / "<manifest>"
    else:
        manifest_path = Path(manifest)
        if not manifest_path.is_absolute() and not manifest_path.exists():
            manifest_path = directory / manifest_path
        try:
            spec = json.loads(manifest_path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"manifest not found: {manifest_path}") from None
        except json.JSONDecodeError as e:
            raise DataError(f"{manifest_path}: invalid JSON ({e})") from None

    entries = spec.get("trials") or []
    if not entries:
        raise DataError(f"{manifest_path}: manifest lists no trials")
    if "sample_rate_hz" not in spec:
        raise DataError(f"{manifest_path}: missing sample_rate_hz")
    classes = spec.get("classes")
    n_classes = int(spec.get("n_classes") or (len(classes) if classes else 0))

    arrays, labels = [], []
    for i, entry in enumerate(entries):
        where = f"{manifest_path} trial {i}"
        if "file" not in entry or "label" not in entry:
            raise DataError(f"{where}: entries need 'file' and 'label'")
        label = _resolve_label(entry["label"], classes, where)
        if label < 0 or (n_classes and label >= n_classes):
            raise LabelRangeError(f"{where}: label {label} outside [0, {n_classes})")
        trial = read_trial_csv(directory / entry["file"])
        if arrays and trial.shape != arrays[0].shape:
            raise DataError(
                f"{where}: {entry['file']} is {trial.shape[0]}x{trial.shape[1]}, "
                f"earlier trials are {arrays[0].shape[0]}x{arrays[0].shape[1]}"
            )
        arrays.append(trial)
        labels.append(label)

    trials = TrialSet(
        np.stack(arrays),
        np.asarray(labels),
        float(spec["sample_rate_hz"]),
        n_classes,
        spec.get("channel_names"),
    )
    logger.info("imported %d trials from %s", trials.n_trials, manifest_path)
    return trials
