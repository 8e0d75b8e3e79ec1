# staflow_backend/storage_factory.py
from pathlib import Path
from typing import Sequence, Union

from .errors import DataError
from .storage_csv import import_csv
from .storage_eegb import load_eegb
from .trials import TrialSet, concat_trialsets


#   Factory: pick a trial loader by file suffix.
#   *.eegb -> load_eegb
#   *.json -> CSV manifest (trial files resolve next to it)


def load_trials_file(path) -> TrialSet:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".eegb":
        return load_eegb(path)
    if suffix == ".json":
        return import_csv(path.parent, path)
    raise DataError(f"{path}: unsupported trial file type {suffix or '(none)'}; use .eegb or a .json manifest")


# A list of paths is one subject's sessions, joined in order.
def load_trials(paths: Union[str, Path, Sequence]) -> TrialSet:
    if isinstance(paths, (str, Path)):
        return load_trials_file(paths)
    return concat_trialsets([load_trials_file(p) for p in paths])
