"""
Runtime settings for the staflow toolkit.

Everything here comes from the environment (optionally a local .env file), so a
run can be pinned without touching code. Run-specific knobs (data files, seeds,
architecture) live in the JSON run config instead, see staflow_api.serializers.
"""

import logging
import os
import sys

from dotenv import load_dotenv

load_dotenv()


def _env_bool(name: str, default: str = "false") -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "y")


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw)
    except ValueError:
        print(f"[WARN] {name}={raw!r} is not an integer, using {default}", file=sys.stderr)
        return default


# worker cap for seed fan-out; results do not depend on it
THREADS = max(1, _env_int("STAFLOW_THREADS", 1))

# "single" (float32) for training, "double" (float64) for gradient checks
_precision_raw = (os.getenv("STAFLOW_PRECISION", "single") or "").strip().lower()
if _precision_raw in ("double", "float64", "f64", "64"):
    PRECISION = "double"
else:
    PRECISION = "single"

LOG_LEVEL = os.getenv("STAFLOW_LOG_LEVEL", "INFO").upper()

OUT_DIR = os.getenv("STAFLOW_OUT_DIR", "runs")

SHOW_PROGRESS = _env_bool("STAFLOW_PROGRESS")


def configure_logging(level: str = LOG_LEVEL) -> None:
    """Install the `[LEVEL] logger: message` stderr format once per process."""
    root = logging.getLogger()
    if any(getattr(h, "_staflow", False) for h in root.handlers):
        root.setLevel(level)
        return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("[%(levelname)s] %(name)s: %(message)s"))
    handler._staflow = True  # type: ignore[attr-defined]
    root.addHandler(handler)
    root.setLevel(level)
