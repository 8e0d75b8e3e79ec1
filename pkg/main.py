# main.py (StaFlowNet CLI: synth | train | ablate | export | eval)
import argparse
import json
import sys

from staflow_backend.errors import StaFlowError
from staflow_backend.settings import configure_logging
from staflow_api.serializers import load_config_file, parse_overrides
from staflow_api.urls import commandpatterns
from staflow_api.views import dispatch


def print_payload(payload: dict) -> None:
    table = payload.pop("table", None)
    if table:
        print("\n=== RESULTS ===")
        print(table, end="")
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="StaFlowNet motor-imagery EEG toolkit",
        epilog="Any extra --key value pair overrides the config file (dotted keys, e.g. --train.lr 0.0005).",
    )
    sub = parser.add_subparsers(dest="cmd")
    for command in commandpatterns:
        p = sub.add_parser(command.name, help=command.help)
        p.add_argument("--config", help="JSON run config file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if not args.cmd:
        parser.print_help()
        return 2
    configure_logging()

    try:
        raw = load_config_file(args.config)
        overrides = parse_overrides(extra)
    except StaFlowError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return e.exit_code

    payload, code = dispatch(args.cmd, raw, overrides)
    if code == 0:
        print_payload(payload)
    else:
        print(f"[ERROR] {payload['message']}\n{payload.get('details', '')}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
