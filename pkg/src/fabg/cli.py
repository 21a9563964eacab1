"""Command line interface.

Subcommands:
    run      execute an experiment config and write the report tree
    compare  rank strategies from a summary.csv
    gen      generate a scenario episode to the binary container
    dtw      distance between two trace CSVs

Exit codes: 0 on success, 1 on bad input or configuration, 2 when an
experiment completed but one or more cells failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .episode_io import write_episode
from .executor import read_trace_csv
from .experiment import (ConfigError, compare_strategies, dtw_means_from_summary,
                         load_config, run_experiment)
from .metrics import dtw as dtw_distance
from .model import EpisodeFormatError
from .scenarios import ScenarioSpec, attach_observations, generate


def _cmd_run(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        config.global_seed = args.seed
    try:
        result = run_experiment(config, args.out, jobs=args.jobs,
                                render_figures=not args.no_figures)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"cells: {len(result.rows)} ok, {len(result.failures)} failed")
    print(f"summary: {result.summary_path}")
    print(f"means: {result.mean_path}")
    print(f"report: {result.report_path}")
    for path in result.figure_paths:
        print(f"figure: {path}")
    if result.failures:
        for failure in result.failures:
            print(f"failed cell {failure['cell']} "
                  f"({failure['scenario']}/{failure['strategy']}/"
                  f"{failure['latency']} t{failure['trial']}): {failure['error']}",
                  file=sys.stderr)
        return 2
    return 0


def _cmd_compare(args) -> int:
    try:
        means = dtw_means_from_summary(args.summary)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = compare_strategies(means)
    for line in report.lines():
        print(line)
    return 0


def _cmd_gen(args) -> int:
    try:
        raw = json.loads(Path(args.spec).read_text())
        if not isinstance(raw, dict):
            raise ValueError("scenario spec must be a JSON object")
        spec = ScenarioSpec(**raw)
    except (OSError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    episode = generate(spec)
    if args.observations:
        episode = attach_observations(episode, spec.resolved_target_dim(),
                                      seed=spec.seed)
    n = write_episode(episode, args.out)
    print(f"wrote {len(episode)} frames ({n} bytes) to {args.out}")
    return 0


def _cmd_dtw(args) -> int:
    try:
        a, _, _ = read_trace_csv(args.a)
        b, _, _ = read_trace_csv(args.b)
        distance = dtw_distance(a, b, dim=args.dim)
    except (OSError, ValueError, EpisodeFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print("%.9g" % distance)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fabg",
        description="Latency-compensated facial action chunk execution")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("--config", required=True, help="experiment JSON path")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config's global seed")
    p_run.add_argument("--jobs", type=int, default=1,
                       help="worker processes for cells (default 1)")
    p_run.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="rank strategies from a summary table")
    p_cmp.add_argument("--summary", required=True, help="summary.csv path")
    p_cmp.set_defaults(func=_cmd_compare)

    p_gen = sub.add_parser("gen", help="generate a scenario episode file")
    p_gen.add_argument("--spec", required=True, help="scenario spec JSON path")
    p_gen.add_argument("--out", required=True, help="episode output path")
    p_gen.add_argument("--observations", action="store_true",
                       help="attach synthetic captures")
    p_gen.set_defaults(func=_cmd_gen)

    p_dtw = sub.add_parser("dtw", help="distance between two trace CSVs")
    p_dtw.add_argument("--a", required=True, help="first trace CSV")
    p_dtw.add_argument("--b", required=True, help="second trace CSV")
    p_dtw.add_argument("--dim", type=int, default=None,
                       help="restrict to one dimension (default: all)")
    p_dtw.set_defaults(func=_cmd_dtw)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
