"""Command-line interface over the experiment pipeline.

Subcommands mirror the pipeline stages (each consumes only the
serialized artifacts of earlier stages), plus ``run`` for the whole
chain and ``report`` to compare finished runs. Exit codes: 0 success,
1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import evaluator, pipeline
from .errors import UbalabError


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, help="override the config root seed")
    common.add_argument("--out", help="output directory (default: runs/<config hash prefix>)")
    common.add_argument("--cache", help=f"uplift cache dir (env override: {pipeline.CACHE_ENV_VAR})")

    p = _Parser(prog="ubalab", description=__doc__)
    sub = p.add_subparsers(dest="command", metavar="command")

    sp = sub.add_parser("prepare", parents=[common], help="ingest, filter, select targets")
    sp.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    sub.add_parser("estimate", parents=[common], help="build or reuse the uplift table")
    sub.add_parser("allocate", parents=[common], help="compute the budget allocation")
    sub.add_parser("attack", parents=[common], help="generate fakes and evaluate the victim")
    sub.add_parser("defend", parents=[common], help="detect fakes, filter, re-evaluate")
    sc = sub.add_parser("correlate", parents=[common], help="walk-count vs score correlation report")
    sc.add_argument("--order", type=int, default=None, help="walk order (3, 5, or 7)")
    sr = sub.add_parser("report", parents=[common], help="compare saved metric reports")
    sr.add_argument("reports", nargs="+", help="report JSON files")
    sub.add_parser("run", parents=[common], help="full pipeline")
    return p


def _load_config(args) -> pipeline.ExperimentConfig:
    if not args.config:
        raise SystemExit(_usage_error("--config is required for this command"))
    cfg = pipeline.ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        raw = dict(cfg.raw)
        raw["seed"] = args.seed
        cfg = pipeline.ExperimentConfig.from_dict(raw)
    return cfg


def _usage_error(message: str) -> int:
    sys.stderr.write(f"ubalab: error: {message}\n")
    return 1


def _out_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    return Path("runs") / cfg.config_hash()[:12]


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 1
    try:
        if args.command == "prepare" and args.print_defaults:
            json.dump(pipeline.DEFAULT_CONFIG, sys.stdout, sort_keys=True, indent=1)
            sys.stdout.write("\n")
            return 0
        if args.command == "report":
            reports = [evaluator.load_report_json(p) for p in args.reports]
            table = evaluator.compare(reports)
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                evaluator.save_comparison(out / "comparison.tsv", table)
                print(f"wrote {out / 'comparison.tsv'}")
            print("\t".join(table.headers))
            for row in table.rows:
                print("\t".join(f"{x:.4f}" if isinstance(x, float) else str(x) for x in row))
            return 0

        cfg = _load_config(args)
        out = _out_dir(args, cfg)
        out.mkdir(parents=True, exist_ok=True)
        cache_dir = pipeline.resolve_cache_dir(flag_dir=args.cache)
        if args.command == "prepare":
            arts = pipeline.stage_prepare(cfg, out)
        elif args.command == "estimate":
            arts, cache_info = pipeline.stage_estimate(cfg, out, cache_dir)
            print(f"cache {'hit' if cache_info['cache_hit'] else 'miss'}: {cache_info['cache_key'][:12]}")
        elif args.command == "allocate":
            arts = pipeline.stage_allocate(cfg, out)
        elif args.command == "attack":
            arts = pipeline.stage_attack(cfg, out)
        elif args.command == "defend":
            arts = pipeline.stage_defend(cfg, out)
        elif args.command == "correlate":
            arts = pipeline.stage_correlate(cfg, out, order=args.order)
        elif args.command == "run":
            manifest = pipeline.run_pipeline(cfg, out, cache_dir)
            print(f"run complete: {len(manifest.stages)} stages -> {out / 'manifest.json'}")
            for st in manifest.stages:
                print(f"  {st['name']}: {len(st['artifacts'])} artifacts in {st['seconds']}s")
            return 0
        else:  # pragma: no cover
            return _usage_error(f"unknown command {args.command!r}")
        for a in arts:
            print(f"wrote {a}")
        return 0
    except SystemExit:
        raise
    except (UbalabError, OSError, ValueError, KeyError) as exc:
        sys.stderr.write(f"ubalab: {exc}\n")
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
