"""Command line entry point: ``bgiteach <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, load_config
from .envs import export_goals_json, make_env
from .runner import (ResultsExistError, build_report, format_table, output_root, result_dir, run_experiment,
                     run_matrix)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bgiteach", description="Teacher/learner goal inference experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config over its seeds")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--force", action="store_true", help="overwrite existing results")
    run.add_argument("--workers", type=int, default=1, help="parallel seed workers")
    run.add_argument("--output-dir", type=Path, help="override the config's output directory")

    mat = sub.add_parser("matrix", help="run a teacher x learner x budget x variant grid")
    mat.add_argument("--config", required=True, type=Path, help="template config")
    mat.add_argument("--teachers", type=_str_list)
    mat.add_argument("--learners", type=_str_list)
    mat.add_argument("--budgets", type=_int_list)
    mat.add_argument("--variants", type=_str_list)
    mat.add_argument("--seeds", type=_int_list, help="override the template seeds")
    mat.add_argument("--force", action="store_true")
    mat.add_argument("--workers", type=int, default=1)
    mat.add_argument("--output-dir", type=Path, help="matrix root (default: output root / template name)")

    rep = sub.add_parser("report", help="summarise a results directory")
    rep.add_argument("results", type=Path, nargs="?")

    goals = sub.add_parser("enumerate-goals", help="print the goal space of an environment as JSON")
    goals.add_argument("--env", choices=("dtb", "blockrel"), required=True)
    goals.add_argument("--horizon", type=int, default=5)

    val = sub.add_parser("validate-config", help="check a config file and print its hash")
    val.add_argument("config", type=Path)
    return p


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.output_dir:
        config = config.with_updates(output_dir=str(args.output_dir))
    summary = run_experiment(config, force=args.force, workers=args.workers)
    agg = summary["aggregate"]
    print(f"wrote {summary['output_dir']}")
    print(" ".join(f"{k}={agg[k]['mean']:.4f}±{agg[k]['std']:.4f}" for k in ("gia", "ogia", "gra", "gia_x_gra")))
    return EXIT_OK


def _cmd_matrix(args) -> int:
    template = load_config(args.config)
    if args.seeds:
        template = template.with_updates(seeds=args.seeds)
    axes = {k: v for k, v in (("teacher", args.teachers), ("learner", args.learners),
                              ("demo_budget", args.budgets), ("variant", args.variants)) if v}
    try:
        cells_root = args.output_dir or output_root() / template.name
        rows = run_matrix(template, axes, Path(cells_root), force=args.force, workers=args.workers)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(format_table(rows))
    failed = [r for r in rows if r.get("failures")]
    for r in failed:
        for seed, err in r["failures"].items():
            print(f"failed: {r['output_dir']} seed {seed}: {err}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def _cmd_report(args) -> int:
    root = args.results or output_root()
    report = build_report(root)
    print(report.text)
    return EXIT_OK


def _cmd_goals(args) -> int:
    print(export_goals_json(make_env(args.env, args.horizon)))
    return EXIT_OK


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    print(json.dumps({"valid": True, "config_hash": config.config_hash(), "output_dir": str(result_dir(config))}))
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "matrix": _cmd_matrix, "report": _cmd_report,
            "enumerate-goals": _cmd_goals, "validate-config": _cmd_validate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResultsExistError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # any other failure is a runtime failure
        if args.verbose:
            logging.getLogger("bgiteach").exception("run failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
