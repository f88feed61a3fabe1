"""Command-line entry point: ``mftrpo run|eval|check-assumptions|presets``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .config import parse_config, preset_names, preset_text
from .errors import ConfigError, MfgError
from .harness import apply_overrides, check_assumptions, evaluate_pair, run_experiment

EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mftrpo", description="Tabular mean-field game solvers.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the configured solver for every seed")
    run.add_argument("--config", required=True)
    run.add_argument("--out-dir")
    run.add_argument("--seed-override", type=int)

    ev = sub.add_parser("eval", help="exploitability and residuals of a stored pair")
    ev.add_argument("--config", required=True)
    ev.add_argument("--policy", required=True, help="csv with columns state,a0,a1,...")
    ev.add_argument("--mu", required=True, help="csv with columns state,...,mass")

    chk = sub.add_parser("check-assumptions", help="monotonicity probe and mixing fit")
    chk.add_argument("--config", required=True)
    chk.add_argument("--out-dir")
    chk.add_argument("--samples", type=int, default=50)

    pre = sub.add_parser("presets", help="list or write bundled configs")
    pre_sub = pre.add_subparsers(dest="action", required=True)
    pre_sub.add_parser("list")
    wr = pre_sub.add_parser("write")
    wr.add_argument("name")
    wr.add_argument("--path", help="destination file (default: <name>.cfg; '-' for stdout)")
    return parser


def _print_rows(header, rows):
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v)
                         for v in row])


def _dispatch(args) -> int:
    if args.command == "run":
        cfg = apply_overrides(parse_config(args.config), args.seed_override)
        result = run_experiment(cfg, args.out_dir)
        _print_rows(("seed", "final_exploitability_reg", "final_exploitability_unreg"),
                    ((s, float(t.final_exploitability), float(t.final_exploitability_unreg))
                     for s, t in result.traces.items()))
        print(f"# outputs: {result.out_dir}", file=sys.stderr)
        return 0
    if args.command == "eval":
        rows = evaluate_pair(parse_config(args.config), args.policy, args.mu)
        _print_rows(("metric", "value"), rows)
        return 0
    if args.command == "check-assumptions":
        if args.samples < 1:
            raise ConfigError("--samples must be >= 1")
        rows = check_assumptions(parse_config(args.config), args.out_dir, args.samples)
        _print_rows(("check", "quantity", "value", "verdict"), rows)
        return 0
    if args.action == "list":
        for name in preset_names():
            print(name)
        return 0
    text = preset_text(args.name)
    if args.path == "-":
        sys.stdout.write(text)
    else:
        dest = Path(args.path or f"{args.name}.cfg")
        dest.write_text(text, encoding="utf-8")
        print(dest)
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        _fail("ConfigError", exc)
        return EXIT_CONFIG
    except (MfgError, OSError) as exc:
        _fail(type(exc).__name__, exc)
        return EXIT_RUNTIME


def _fail(kind, exc):
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
