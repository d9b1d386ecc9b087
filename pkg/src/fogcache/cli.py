"""Command-line front end: run, compare, sweep, validate, emit-plot-data."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, NumericalError
from . import harness

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fogcache",
        description="Slotted edge-cache simulator and cache-policy learners.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, config_required: bool = True):
        p.add_argument("--config", required=config_required, help="config file (flat YAML)")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument(
            "--seed", type=int, action="append", default=None,
            help="seed override; repeat for several seeds",
        )
        p.add_argument("--agent", default=None, help="agent override")

    run_p = sub.add_parser("run", help="run one agent on one or more seeds")
    add_common(run_p)

    compare_p = sub.add_parser("compare", help="run all configured agents on paired streams")
    add_common(compare_p)

    sweep_p = sub.add_parser("sweep", help="run the configured grid sweep")
    add_common(sweep_p)

    validate_p = sub.add_parser("validate", help="check a config and echo resolved values")
    validate_p.add_argument("--config", required=True, help="config file (flat YAML)")

    emit_p = sub.add_parser(
        "emit-plot-data", help="turn result CSVs into long-format figure data"
    )
    emit_p.add_argument("--out", required=True, help="directory holding prior results")
    emit_p.add_argument(
        "--figure", type=int, required=True, choices=harness.FIGURE_IDS,
        help="figure dataset to emit",
    )
    return parser


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None):
        cfg = replace(cfg, seeds=list(args.seed))
    if getattr(args, "agent", None):
        if args.agent not in harness.AGENT_KINDS:
            raise ConfigError(
                f"unknown agent {args.agent!r}; expected one of {harness.AGENT_KINDS}"
            )
        cfg = replace(cfg, agent=args.agent)
    harness.validate_config(cfg)
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "validate":
        cfg = harness.load_config(args.config)
        for line in harness.config_lines(cfg):
            print(line)
        return EXIT_OK

    if args.command == "emit-plot-data":
        path = harness.emit_figure(Path(args.out), args.figure)
        print(f"wrote {path}")
        return EXIT_OK

    cfg = _apply_overrides(harness.load_config(args.config), args)
    out_dir = Path(args.out)

    if args.command == "run":
        for seed in cfg.seeds:
            trace = harness.record_trace(cfg, seed) if cfg.export_requests else None
            result = harness.run_episode(cfg, cfg.agent, seed, out_dir=out_dir, trace=trace)
            print(
                f"run agent={result.agent} seed={result.seed} "
                f"steady_hit_rate={result.steady_hit_rate:.6f} "
                f"convergence_window={result.convergence_window}"
            )
        return EXIT_OK

    if args.command == "compare":
        results = harness.compare(cfg, out_dir=out_dir)
        for result in sorted(results, key=lambda r: (r.agent, r.seed)):
            print(
                f"compare agent={result.agent} seed={result.seed} "
                f"steady_hit_rate={result.steady_hit_rate:.6f} "
                f"convergence_window={result.convergence_window}"
            )
        return EXIT_OK

    if args.command == "sweep":
        summaries = harness.sweep(cfg, out_dir=out_dir)
        for tag in sorted(summaries):
            for result in sorted(summaries[tag], key=lambda r: (r.agent, r.seed)):
                print(
                    f"sweep grid={tag} agent={result.agent} seed={result.seed} "
                    f"steady_hit_rate={result.steady_hit_rate:.6f} "
                    f"convergence_window={result.convergence_window}"
                )
        return EXIT_OK

    raise ConfigError(f"unknown command {args.command!r}")


def main_entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    main_entry()
