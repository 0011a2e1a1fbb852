"""``singular-pool`` command line entry point.

Exit status is 0 on success, 2 when the config or inputs fail validation and
3 for any other runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import experiment as ex
from .data import IngestError, ParseError, ValidationError

COMMANDS = ("ingest", "train", "attack", "bounds", "convergence", "report")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="singular-pool", description="Robust graph pooling experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")
    return p


def _run(args) -> object:
    cfg = ex.load_config(args.config, seed_offset=args.seed_offset, output=args.out)
    if args.command == "report":
        summary = ex.cmd_report(cfg.output)
        return {"cells": len(summary["cells"]), "config_hash": summary["config_hash"]}
    if args.command == "ingest":
        return ex.cmd_ingest(cfg)
    if args.command == "train":
        frags = ex.cmd_train(cfg)
        return [{"pooling": f["pooling"], "seed": f["seed"], "clean_accuracy": f["clean_accuracy"]} for f in frags]
    if args.command == "attack":
        frags = ex.cmd_attack(cfg)
        return [
            {"pooling": f["pooling"], "seed": f["seed"], "attacked_accuracy": f["attacked_accuracy"], "success_rate": f["success_rate"]}
            for f in frags
        ]
    if args.command == "bounds":
        return ex.cmd_bounds(cfg)
    return ex.cmd_convergence(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = _run(args)
    except (ValidationError, IngestError, ParseError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(out if isinstance(out, str) else json.dumps(out, indent=1))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
