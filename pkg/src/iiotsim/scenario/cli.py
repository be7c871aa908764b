"""Command line: ``iiotsim run|validate|list-scenarios``.

Exit codes: 0 when every scenario assertion passes, 1 when one fails,
2 for parse or validation errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from iiotsim.scenario import list_scenarios, resolve, run_scenario
from iiotsim.scenario.schema import ScenarioError, ValidationError, load_scenario

EXIT_OK, EXIT_ASSERT, EXIT_INVALID = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iiotsim", description="Deterministic IIoT scenario runner")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file or built-in name")
    run.add_argument("file")
    run.add_argument("--seed", type=int)
    run.add_argument("--duration", type=float, metavar="SEC", help="virtual run time in seconds")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE",
                     help="override a dotted path, e.g. placement=CLOUD")
    run.add_argument("--metrics-out", type=Path, metavar="PATH")
    run.add_argument("--report", type=Path, metavar="PATH")

    val = sub.add_parser("validate", help="check a scenario without running it")
    val.add_argument("file")

    sub.add_parser("list-scenarios", help="print the built-in scenario names")
    return ap


def _run(args: argparse.Namespace) -> int:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"scenario.seed={args.seed}")
    if args.duration is not None:
        overrides.append(f"scenario.duration_s={args.duration!r}")
    result = run_scenario(load_scenario(resolve(args.file), overrides))
    if args.metrics_out is not None:
        args.metrics_out.write_text(result.csv_text)
    if args.report is not None:
        args.report.write_text(result.report)
    sys.stdout.write(result.report)
    for note in result.notes:
        print(f"note: {note}", file=sys.stderr)
    return EXIT_OK if result.passed else EXIT_ASSERT


def _validate(args: argparse.Namespace) -> int:
    load_scenario(resolve(args.file))
    print(f"{args.file}: ok")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list-scenarios":
            print("\n".join(list_scenarios()))
            return EXIT_OK
        if args.command == "validate":
            return _validate(args)
        return _run(args)
    except ValidationError as exc:
        for v in exc.violations:
            print(f"invalid: {v}", file=sys.stderr)
        return EXIT_INVALID
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
