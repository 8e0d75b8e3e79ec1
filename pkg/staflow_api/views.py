# staflow_api/views.py
import logging
from typing import Dict, Optional, Tuple

from staflow import StaFlowService
from staflow_backend.errors import StaFlowError

from .serializers import RunConfig, parse_run_config

logger = logging.getLogger(__name__)


def _service(config: RunConfig) -> StaFlowService:
    return StaFlowService(out_dir=config.out_dir)


def cmd_synth(config: RunConfig) -> dict:
    """Write a synthetic train/test EEGB pair and its provenance sidecar."""
    files = _service(config).synthesize(config.synth)
    return {"status": "success", "message": "Synthetic sessions written.", **files}


def cmd_train(config: RunConfig) -> dict:
    result = _service(config).train(config)
    report = result["report"]
    return {
        "status": "success",
        "message": f"Trained {report.variant} over {len(report.per_seed)} runs.",
        "aggregate": report.aggregate,
        "checkpoints": result["checkpoints"],
        "metrics_file": result["metrics_file"],
    }


def cmd_ablate(config: RunConfig) -> dict:
    result = _service(config).ablate(config)
    return {
        "status": "success",
        "message": f"Compared {len(result['reports'])} variants against Full.",
        "table": result["table"],
        "ablation_file": result["ablation_file"],
    }


def cmd_export(config: RunConfig) -> dict:
    return {"status": "success", "message": "Spatial weights and stage features exported.", **_service(config).export(config)}


def cmd_eval(config: RunConfig) -> dict:
    result = _service(config).evaluate_checkpoint(config)
    return {
        "status": "success",
        "message": "Checkpoint evaluated.",
        "metrics": result["report"].per_seed[0].to_dict(),
        "metrics_file": result["metrics_file"],
    }


def dispatch(command: str, raw: dict, overrides: Optional[Dict[str, object]] = None) -> Tuple[dict, int]:
    """Validate, run one command and return (status payload, process exit code)."""
    from .urls import resolve

    try:
        handler = resolve(command)
        config = parse_run_config(command, raw, overrides)
        return handler(config), 0
    except StaFlowError as e:
        logger.error("%s failed: %s", command, e)
        return {
            "status": "error",
            "message": f"{command} failed ({type(e).__name__}).",
            "details": str(e),
        }, e.exit_code
    except Exception as e:
        logger.exception("%s crashed", command)
        return {
            "status": "error",
            "message": "Internal error during processing.",
            "details": str(e),
        }, 1
