"""Command-line entry point.

Four subcommands map onto the experiment runners:

    qasearch search   --config cfg.ini [--out DIR] [--seed N] [--jobs N]
    qasearch evaluate CIRCUIT --config cfg.ini [...]
    qasearch fidelity --config cfg.ini [...]
    qasearch report   RUN_DIR [RUN_DIR ...] [--out DIR]

Exit codes: 0 on success, 2 for configuration problems, 3 for runtime
or numeric failures.  --no-figures skips PNG rendering; the CSV and
JSON outputs are identical either way.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import ConfigError, load_config
from .experiments import ReportError, cmd_evaluate, cmd_fidelity, cmd_report, cmd_search

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qasearch",
        description="Differentiable quantum architecture search with an "
                    "attention-enriched architecture matrix.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="INI experiment file")
            p.add_argument("--seed", type=int, default=None,
                           help="run only this trial seed")
            p.add_argument("--jobs", type=int, default=1,
                           help="parallel trial processes")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering")

    p = sub.add_parser("search", help="architecture search + fine-tune trials")
    common(p)
    p = sub.add_parser("evaluate", help="fine-tune a fixed circuit file")
    p.add_argument("circuit", help="circuit text file")
    common(p)
    p = sub.add_parser("fidelity", help="search circuits and score fidelity")
    common(p)
    p = sub.add_parser("report", help="aggregate run summaries into a table")
    p.add_argument("runs", nargs="+", help="run directories with summary.json")
    common(p, needs_config=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            cmd_report(args.runs, outdir=args.out,
                       figures=not args.no_figures)
            return EXIT_OK

        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seeds=(args.seed,))
        kwargs = dict(outdir=args.out, jobs=args.jobs,
                      figures=not args.no_figures)
        if args.command == "search":
            cmd_search(cfg, **kwargs)
        elif args.command == "evaluate":
            cmd_evaluate(args.circuit, cfg, **kwargs)
        elif args.command == "fidelity":
            cmd_fidelity(cfg, **kwargs)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ReportError, ValueError, OSError, FloatingPointError,
            ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
