"""Command-line front end: ``monoito run <scenario.json>`` and ``monoito list-builtins``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import registry
from ._accel import set_threads
from .comparison import InstanceViolation
from .scenario import ConfigError, PipelineError, default_out_dir, load, resolve, run_config

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_PIPELINE = 0, 1, 2, 3


def _cmd_run(args) -> int:
    try:
        raw = load(args.scenario)
        cfg = resolve(raw, seed=args.seed, base_dir=Path(args.scenario).resolve().parent)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads:
        set_threads(args.threads)
    out = default_out_dir(args.scenario, args.out)
    try:
        report = run_config(cfg, out)
    except (ConfigError, InstanceViolation) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as e:
        print(f"pipeline error: {e}", file=sys.stderr)
        return EXIT_PIPELINE
    for name, chk in sorted(report["assertions"].items()):
        print(f"{'PASS' if chk['passed'] else 'FAIL'}  {name}")
    print(f"{report['name']}: {'passed' if report['passed'] else 'FAILED'} -> {out}")
    return EXIT_OK if report["passed"] else EXIT_FAILED


def _cmd_list(args) -> int:
    items = registry.listing()
    if args.json:
        print(json.dumps(items, indent=2, default=repr))
        return EXIT_OK
    for cat in registry.categories():
        print(f"[{cat}]")
        for it in items:
            if it["category"] == cat:
                print(f"  {it['name']:<30} {it['role']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="monoito", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario")
    r.add_argument("--out", default=None, help="output directory (overrides $MONOITO_OUT)")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--threads", type=int, default=None, help="numba thread count")
    r.set_defaults(func=_cmd_run)
    ls = sub.add_parser("list-builtins", help="print the registry")
    ls.add_argument("--json", action="store_true")
    ls.set_defaults(func=_cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
