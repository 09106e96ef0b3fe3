"""Experiment runner, metrics persistence and summary tables.

Output layout of one experiment directory::

    manifest.json
    runs/<strategy>/seed_<s>/metrics.csv      one row per round
    runs/<strategy>/seed_<s>/metrics.json     full RoundMetrics records
    runs/<strategy>/seed_<s>/pso_trace.csv    round, iteration, best_fitness
    runs/<strategy>/seed_<s>/aco_trace.csv    round, iteration, device, best_cost
    runs/<strategy>/seed_<s>/routes.json      round -> device -> hop list
    figures/performance_metrics.csv           strategy, seed, metric, value
    figures/training_loss.csv                 strategy, seed, round, global_loss
    figures/comm_cost.csv                     strategy, seed, round, comm_cost_per_client, comm_mb_per_client
    figures/participation.csv                 strategy, seed, round, participation_count
    summary.csv / summary.json                per-strategy mean and stddev over seeds
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import statistics
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import RunConfig, config_hash, materialize
from .errors import MissingRuns
from .flengine import STRATEGIES, RoundMetrics, run_simulation

log = logging.getLogger(__name__)

ABLATION_ARMS: dict[str, str] = {
    "full": "pso_aco",
    "no_pso": "random_aco",
    "no_aco": "pso_static",
    "edge_only": "edge_only",
}

SUMMARY_METRICS = ("accuracy", "comm_cost", "comm_cost_mb", "latency_s", "participation", "final_loss")


@dataclass(frozen=True)
class RunRecord:
    strategy: str
    seed: int
    history: tuple[RoundMetrics, ...]
    halted: Optional[str] = None

    def scalars(self) -> dict[str, float]:
        """Per-run values that feed the summary table.

        Accuracy and loss are taken at the final round; cost, latency and
        participation are averaged over rounds.
        """
        if not self.history:
            raise MissingRuns(f"{self.strategy}/seed {self.seed} has no completed rounds")
        h = self.history
        return {
            "accuracy": h[-1].accuracy,
            "comm_cost": float(np.mean([m.comm_cost_per_client for m in h])),
            "comm_cost_mb": float(np.mean([m.comm_mb_per_client for m in h])),
            "latency_s": float(np.mean([m.latency_s for m in h])),
            "participation": float(np.mean([m.participation_count for m in h])),
            "final_loss": h[-1].global_loss,
        }


# -- CSV / JSON helpers ---------------------------------------------------------------


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else v for v in r])


def _read_csv(path: Path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _num(v: str):
    if v == "":
        return None
    try:
        return int(v)
    except ValueError:
        return float(v)


def _dump_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_metrics(run_dir: Path, history: Sequence[RoundMetrics]) -> None:
    fields = RoundMetrics.CSV_FIELDS
    _write_csv(run_dir / "metrics.csv", fields, ([m.csv_row()[k] for k in fields] for m in history))
    _dump_json(run_dir / "metrics.json", [m.to_dict() for m in history])
    _write_csv(
        run_dir / "pso_trace.csv",
        ("round", "iteration", "best_fitness"),
        ((m.round_index, i, f) for m in history for i, f in enumerate(m.selection_trace)),
    )
    _write_csv(
        run_dir / "aco_trace.csv",
        ("round", "iteration", "device", "best_cost"),
        (
            (m.round_index, i, d, c)
            for m in history
            for d in sorted(m.routing_trace)
            for i, c in enumerate(m.routing_trace[d])
        ),
    )
    _dump_json(run_dir / "routes.json", {str(m.round_index): {str(d): list(h) for d, h in m.routes.items()} for m in history})


def read_metrics_csv(path: str | Path) -> list[dict]:
    rows = []
    for r in _read_csv(Path(path)):
        row = {k: _num(v) for k, v in r.items() if k != "selected"}
        row["selected"] = tuple(int(x) for x in r["selected"].split()) if r["selected"] else ()
        rows.append(row)
    return rows


def read_metrics_json(path: str | Path) -> list[RoundMetrics]:
    return [RoundMetrics.from_dict(d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]


def read_tidy_csv(path: str | Path) -> list[dict]:
    return [{k: (v if k in ("strategy", "metric") else _num(v)) for k, v in r.items()} for r in _read_csv(Path(path))]


# -- summary --------------------------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    strategy: str
    n_runs: int
    mean: dict[str, float]
    std: dict[str, float]


@dataclass(frozen=True)
class SummaryTable:
    rows: tuple[SummaryRow, ...]

    def row(self, strategy: str) -> SummaryRow:
        for r in self.rows:
            if r.strategy == strategy:
                return r
        raise KeyError(strategy)

    def header(self) -> list[str]:
        cols = ["strategy", "n_runs"]
        for m in SUMMARY_METRICS:
            cols += [f"{m}_mean", f"{m}_std"]
        return cols

    def records(self) -> list[list]:
        out = []
        for r in self.rows:
            rec: list = [r.strategy, r.n_runs]
            for m in SUMMARY_METRICS:
                rec += [r.mean[m], r.std[m]]
            out.append(rec)
        return out


def summarize(runs: Sequence[RunRecord], strategies: Optional[Sequence[str]] = None) -> SummaryTable:
    """Mean and population standard deviation of each run-level metric across seeds."""
    order = list(strategies) if strategies is not None else sorted({r.strategy for r in runs})
    rows = []
    for s in order:
        mine = [r for r in runs if r.strategy == s and r.history]
        if not mine:
            raise MissingRuns(f"no completed runs for strategy {s!r}")
        vals = [r.scalars() for r in sorted(mine, key=lambda r: r.seed)]
        mean = {m: statistics.fmean(v[m] for v in vals) for m in SUMMARY_METRICS}
        std = {m: statistics.pstdev([v[m] for v in vals]) for m in SUMMARY_METRICS}
        rows.append(SummaryRow(s, len(vals), mean, std))
    return SummaryTable(tuple(rows))


def write_summary(table: SummaryTable, out_dir: Path, stem: str = "summary") -> None:
    _write_csv(out_dir / f"{stem}.csv", table.header(), table.records())
    _dump_json(out_dir / f"{stem}.json", [dict(zip(table.header(), rec)) for rec in table.records()])


def read_summary(path: str | Path) -> SummaryTable:
    rows = []
    for r in _read_csv(Path(path)):
        rows.append(
            SummaryRow(
                r["strategy"],
                int(r["n_runs"]),
                {m: float(r[f"{m}_mean"]) for m in SUMMARY_METRICS},
                {m: float(r[f"{m}_std"]) for m in SUMMARY_METRICS},
            )
        )
    return SummaryTable(tuple(rows))


# -- experiments ------------------------------------------------------------------------


def _versions() -> dict[str, str]:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "pydantic"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    from . import __version__

    out["swarmfl"] = __version__
    return out


def _uses_random(strategy: str) -> bool:
    return STRATEGIES[strategy][0] == "random"


def _uses_pso(strategy: str) -> bool:
    return STRATEGIES[strategy][0] == "pso"


@dataclass(frozen=True)
class ExperimentResult:
    out_dir: Path
    runs: tuple[RunRecord, ...]
    manifest: dict


def run_experiment(
    cfg: RunConfig,
    out_dir: str | Path,
    strategies: Optional[Sequence[str]] = None,
    threads: int = 1,
    labels: Optional[dict[str, str]] = None,
) -> ExperimentResult:
    """Run every (strategy, seed) pair and write metrics, figure data and a manifest.

    Strategies that select devices by PSO run first so that an unset
    ``baselines.random_k`` can be resolved to their mean selection size.
    ``labels`` renames strategies in summary tables and figure files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    strategies = list(strategies) if strategies else [cfg.strategy]
    labels = labels or {}
    ordered = sorted(strategies, key=lambda s: (not _uses_pso(s), strategies.index(s)))

    runs: list[RunRecord] = []
    run_ids: list[str] = []
    random_k = cfg.baselines.random_k
    for strategy in ordered:
        scfg = cfg.model_copy(update={"strategy": strategy})
        k = None
        if _uses_random(strategy):
            k = random_k
            if k is None:
                sizes = [m.participation_count for sid, r in zip(run_ids, runs) if _uses_pso(sid) for m in r.history]
                k = max(1, round(statistics.fmean(sizes))) if sizes else None
        for seed in cfg.seeds:
            history = run_simulation(scfg, seed, threads=threads, random_k=k)
            halted = f"halted after {len(history)} rounds" if len(history) < cfg.n_rounds else None
            rec = RunRecord(labels.get(strategy, strategy), seed, tuple(history), halted)
            runs.append(rec)
            run_ids.append(strategy)
            write_metrics(out / "runs" / rec.strategy / f"seed_{seed}", history)

    runs.sort(key=lambda r: ([labels.get(s, s) for s in strategies].index(r.strategy), r.seed))
    write_figures(runs, out)
    manifest = {
        "format": "swarmfl-manifest",
        "version": 1,
        "config_hash": config_hash(cfg),
        "config": materialize(cfg),
        "seeds": list(cfg.seeds),
        "strategies": [labels.get(s, s) for s in strategies],
        "strategy_ids": {labels.get(s, s): s for s in strategies},
        "versions": _versions(),
        "runs": [
            {
                "strategy": r.strategy,
                "seed": r.seed,
                "rounds": len(r.history),
                "halted": r.halted,
                "path": f"runs/{r.strategy}/seed_{r.seed}",
            }
            for r in runs
        ],
    }
    _dump_json(out / "manifest.json", manifest)
    if runs and all(r.history for r in runs):
        write_summary(summarize(runs, manifest["strategies"]), out)
    return ExperimentResult(out, tuple(runs), manifest)


def write_figures(runs: Sequence[RunRecord], out: Path) -> None:
    fig = out / "figures"
    _write_csv(
        fig / "performance_metrics.csv",
        ("strategy", "seed", "metric", "value"),
        (
            (r.strategy, r.seed, k, getattr(r.history[-1], k))
            for r in runs
            if r.history
            for k in ("accuracy", "precision_macro", "recall_macro", "f1_macro")
        ),
    )
    _write_csv(
        fig / "training_loss.csv",
        ("strategy", "seed", "round", "global_loss"),
        ((r.strategy, r.seed, m.round_index, m.global_loss) for r in runs for m in r.history),
    )
    _write_csv(
        fig / "comm_cost.csv",
        ("strategy", "seed", "round", "comm_cost_per_client", "comm_mb_per_client"),
        ((r.strategy, r.seed, m.round_index, m.comm_cost_per_client, m.comm_mb_per_client) for r in runs for m in r.history),
    )
    _write_csv(
        fig / "participation.csv",
        ("strategy", "seed", "round", "participation_count"),
        ((r.strategy, r.seed, m.round_index, m.participation_count) for r in runs for m in r.history),
    )


def run_ablation(cfg: RunConfig, out_dir: str | Path, threads: int = 1) -> tuple[ExperimentResult, SummaryTable]:
    """Full pipeline against its three ablations; writes ``ablation.csv``."""
    labels = {sid: arm for arm, sid in ABLATION_ARMS.items()}
    res = run_experiment(cfg, out_dir, list(ABLATION_ARMS.values()), threads, labels=labels)
    table = summarize(res.runs, list(ABLATION_ARMS))
    write_summary(table, res.out_dir, stem="ablation")
    return res, table


def load_experiment(out_dir: str | Path) -> ExperimentResult:
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    runs = []
    for r in manifest["runs"]:
        history = tuple(read_metrics_json(out / r["path"] / "metrics.json"))
        runs.append(RunRecord(r["strategy"], int(r["seed"]), history, r.get("halted")))
    return ExperimentResult(out, tuple(runs), manifest)


def weakly_dominates(full: RunRecord, other: RunRecord) -> bool:
    """At least as accurate and no more costly per client."""
    a, b = full.scalars(), other.scalars()
    return a["accuracy"] >= b["accuracy"] and a["comm_cost"] <= b["comm_cost"]
