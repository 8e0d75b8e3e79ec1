# staflow_api/urls.py
from typing import Callable, NamedTuple

from staflow_backend.errors import UsageError

from .views import cmd_ablate, cmd_eval, cmd_export, cmd_synth, cmd_train


class Command(NamedTuple):
    name: str
    handler: Callable[..., dict]
    help: str


commandpatterns = [
    # data
    Command("synth", cmd_synth, "Generate a seeded synthetic train/test EEGB pair"),
    # training
    Command("train", cmd_train, "Multi-seed training; writes checkpoint, histories and metrics"),
    Command("ablate", cmd_ablate, "Run every model variant under identical seeds and compare to Full"),
    # analysis
    Command("export", cmd_export, "Export spatial weights and per-stage features with Fisher scores"),
    Command("eval", cmd_eval, "Evaluate a saved checkpoint on a data file"),
]


def resolve(name: str) -> Callable[..., dict]:
    for command in commandpatterns:
        if command.name == name:
            return command.handler
    raise UsageError(f"unknown command {name!r}; expected one of {[c.name for c in commandpatterns]}")
