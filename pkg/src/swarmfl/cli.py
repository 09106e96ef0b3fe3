"""Command-line entry point: ``swarmfl {run,compare,ablate,validate}``.

Exit codes: 0 success, 1 runtime/config failure (JSON diagnostics on stderr),
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import STRATEGY_IDS, RunConfig, load_config, materialize
from .errors import ConfigError, SwarmFLError
from .report import SummaryTable, load_experiment, run_ablation, run_experiment, summarize, write_summary

OUT_DIR_ENV = "SWARMFL_OUT_DIR"
DEFAULT_OUT_DIR = "swarmfl_out"


def _default_out() -> str:
    return os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _strategy_list(text: str) -> list[str]:
    out = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in out if s not in STRATEGY_IDS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"unknown strategy {', '.join(bad) or text!r}; choose from {', '.join(STRATEGY_IDS)}")
    return out


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        v = 0
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=None, help=f"output directory (default: ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})")
    common.add_argument("--seed-override", type=_seed_list, default=None, metavar="S[,S...]", help="replace the config's seed list")
    common.add_argument("--threads", type=_positive, default=1, help="worker threads inside each run (results do not depend on it)")
    common.add_argument("--strategy", type=_strategy_list, default=None, metavar="ID[,ID...]", help="strategy or strategies to run")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="swarmfl", description="Swarm-optimized federated learning simulator.")
    sub = p.add_subparsers(dest="command", required=True, metavar="{run,compare,ablate,validate}")

    run = sub.add_parser("run", parents=[common], help="run one config")
    run.add_argument("config_path", nargs="?", metavar="config")
    run.add_argument("--config", dest="config_flag", default=None)

    cmp_ = sub.add_parser("compare", parents=[common], help="summarize experiment directories or configs side by side")
    cmp_.add_argument("inputs", nargs="*", metavar="config-or-run-dir")
    cmp_.add_argument("--config", dest="config_flag", action="append", default=None)

    abl = sub.add_parser("ablate", parents=[common], help="full pipeline versus its ablations")
    abl.add_argument("config_path", nargs="?", metavar="config")
    abl.add_argument("--config", dest="config_flag", default=None)

    val = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    val.add_argument("config_path", nargs="?", metavar="config")
    val.add_argument("--config", dest="config_flag", default=None)
    return p


def _config_arg(p: argparse.ArgumentParser, args) -> str:
    path = args.config_flag or args.config_path
    if not path:
        p.error(f"{args.command}: a config path is required")
    return path


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    upd = {}
    if args.seed_override is not None:
        upd["seeds"] = args.seed_override
    if args.strategy:
        upd["strategy"] = args.strategy[0]
    return cfg.model_copy(update=upd) if upd else cfg


def _print_table(table: SummaryTable) -> None:
    print(f"{'strategy':<20}{'runs':>5}{'accuracy':>18}{'comm_cost':>20}{'participation':>18}")
    for r in table.rows:
        print(
            f"{r.strategy:<20}{r.n_runs:>5}"
            f"{r.mean['accuracy']:>11.4f}±{r.std['accuracy']:<6.4f}"
            f"{r.mean['comm_cost']:>12.4f}±{r.std['comm_cost']:<7.4f}"
            f"{r.mean['participation']:>11.2f}±{r.std['participation']:<6.2f}"
        )


def _fail(kind: str, exc: Exception, **extra) -> int:
    doc = {"error": kind, "message": str(exc), **extra}
    print(json.dumps(doc, indent=1), file=sys.stderr)
    return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        return _dispatch(parser, parser.parse_args(argv))
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)


def _dispatch(parser: argparse.ArgumentParser, args) -> int:
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        if args.command == "validate":
            cfg = load_config(_config_arg(parser, args))
            print(json.dumps({"ok": True, "config": materialize(cfg)}, indent=1, sort_keys=True))
            return 0

        out = Path(args.out_dir or _default_out())
        if args.command == "run":
            cfg = _apply_overrides(load_config(_config_arg(parser, args)), args)
            res = run_experiment(cfg, out, args.strategy or [cfg.strategy], threads=args.threads)
            if res.runs:
                _print_table(summarize(res.runs, res.manifest["strategies"]))
            print(f"wrote {out}")
            return 0

        if args.command == "ablate":
            cfg = _apply_overrides(load_config(_config_arg(parser, args)), args)
            _, table = run_ablation(cfg, out, threads=args.threads)
            _print_table(table)
            print(f"wrote {out / 'ablation.csv'}")
            return 0

        # compare
        inputs = list(args.inputs) + list(args.config_flag or [])
        if not inputs:
            parser.error("compare: give at least one config or experiment directory")
        runs, order = [], []
        for i, item in enumerate(inputs):
            path = Path(item)
            if path.is_dir():
                exp = load_experiment(path)
            else:
                cfg = _apply_overrides(load_config(path), args)
                exp = run_experiment(cfg, out / f"{i:02d}_{path.stem}", args.strategy or [cfg.strategy], threads=args.threads)
            for r in exp.runs:
                if r.strategy not in order:
                    order.append(r.strategy)
            runs.extend(exp.runs)
        table = summarize(runs, order)
        out.mkdir(parents=True, exist_ok=True)
        write_summary(table, out, stem="comparison")
        _print_table(table)
        print(f"wrote {out / 'comparison.csv'}")
        return 0
    except ConfigError as exc:
        return _fail("config", exc, source=exc.source, issues=exc.issues)
    except FileNotFoundError as exc:
        return _fail("file", exc, path=exc.filename)
    except SwarmFLError as exc:
        return _fail(type(exc).__name__, exc)


if __name__ == "__main__":
    sys.exit(main())
