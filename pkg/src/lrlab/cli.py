"""Command-line entry point: ``lrlab <verb> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, EmptyAdversarialSetError, LRLabError, MissingArtifactError
from .evaluation import CSV_FIELDS
from .pipeline import STAGES, execute, load_config

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_EMPTY, EXIT_FAILED = 0, 2, 3, 4, 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lrlab", description="Layer-regression adversarial detection lab.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for verb in STAGES + ("pipeline",):
        p = sub.add_parser(verb, help=f"run the {verb} stage" if verb != "pipeline" else "run every stage")
        p.add_argument("--config", help="JSON run config (default: the bundled desk config)")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="set every seed in the config")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a leaf key by dotted path; VALUE is parsed as JSON when possible")
        p.add_argument("--force", action="store_true", help="rerun stages even when their artifacts are current")
    rp = sub.add_parser("report", help="merge report.csv files from run directories")
    rp.add_argument("runs", nargs="*", help="run directories")
    return parser


def _sort_key(row: dict):
    try:
        eps = float(row["epsilon"])
    except ValueError:
        eps = float("inf")
    return row["attack"], eps


def cmd_report(runs) -> int:
    if not runs:
        print("report: no run directories given", file=sys.stderr)
        return EXIT_CONFIG
    missing = [d for d in runs if not (Path(d) / "report.csv").exists()]
    if missing:
        print(f"report: no report.csv in {', '.join(missing)}", file=sys.stderr)
        return EXIT_MISSING
    rows = []
    header = ",".join(CSV_FIELDS)
    for d in runs:
        lines = (Path(d) / "report.csv").read_text().splitlines()
        if not lines or lines[0] != header:
            print(f"report: {d}/report.csv has an unexpected header", file=sys.stderr)
            return EXIT_CONFIG
        rows.extend(dict(zip(CSV_FIELDS, line.split(","))) for line in lines[1:] if line)
    rows.sort(key=_sort_key)
    print(header)
    for r in rows:
        print(",".join(r[k] for k in CSV_FIELDS))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        return cmd_report(args.runs)
    stage = args.command
    try:
        cfg = load_config(args.config, args.overrides, args.seed, args.out)
        run = execute(cfg, stage, args.force)
    except ConfigError as exc:
        print(f"{stage}: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"{stage}: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except EmptyAdversarialSetError as exc:
        print(f"{stage}: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except LRLabError as exc:
        print(f"{stage}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    print(f"{stage}: done, run {run.run_id} in {run.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
