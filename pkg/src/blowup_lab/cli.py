"""Command-line entry point: run experiment configs, compare runs, list families."""

from __future__ import annotations

import argparse
import json
import sys

from .nonlinearity import FAMILIES
from .runner import ConfigError, compare, run


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="blowup-lab",
        description="Numerical laboratory for boundary blow-up solutions of "
                    "-lap(u) + f(x,u) = 0 on grid domains.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute the pipelines a config selects")
    p_run.add_argument("config", help="YAML experiment config")
    p_run.add_argument("--out", default=None,
                       help="output directory (default: config 'out', then "
                            "$BLOWUP_LAB_OUT, then ./runs)")
    p_run.add_argument("--tasks", type=int, default=None,
                       help="parallel pipeline workers")

    p_cmp = sub.add_parser("compare", help="numeric diff of two run manifests")
    p_cmp.add_argument("manifest_a")
    p_cmp.add_argument("manifest_b")
    p_cmp.add_argument("--tol", type=float, default=0.0)

    sub.add_parser("list-families", help="print the nonlinearity families")

    args = parser.parse_args(argv)

    if args.command == "list-families":
        for fam in FAMILIES:
            print(fam)
        return 0

    if args.command == "run":
        try:
            manifest = run(args.config, out_dir=args.out, tasks=args.tasks)
        except ConfigError as err:
            print(f"config error: {err}", file=sys.stderr)
            return 2
        ok = all(st["ok"] for st in manifest.pipeline_status.values())
        for name, st in manifest.pipeline_status.items():
            mark = "ok" if st["ok"] else f"FAILED: {st['error']}"
            print(f"{name}: {mark}")
        return 0 if ok else 1

    if args.command == "compare":
        report = compare(args.manifest_a, args.manifest_b, tol=args.tol)
        print(json.dumps(report, indent=1, sort_keys=True))
        return 0 if report["empty"] else 1

    return 2


if __name__ == "__main__":
    sys.exit(main())
