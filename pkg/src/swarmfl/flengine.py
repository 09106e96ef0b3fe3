"""Federated round orchestration and energy/time/communication accounting.

A round runs: eligibility -> selection -> local training -> routing -> ledger
-> FedAvg -> evaluation. Every cross-device reduction happens in ascending
device-id order so worker count never changes a result.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import aco, baselines, datagen, localmodel, pso, rng
from .config import ObjectiveWeights, RunConfig, materialize
from .datagen import Dataset, PartitionAssignment
from .domain import Device, ModelParams, NetworkGraph, build_topology, make_fleet
from .errors import DimensionMismatch, EmptyUpdateSet, LedgerViolation, NoEligibleDevices

log = logging.getLogger(__name__)

# strategy -> (selection, routing)
STRATEGIES: dict[str, tuple[str, str]] = {
    "pso_aco": ("pso", "aco"),
    "random_fixed": ("random", "static"),
    "rule_based": ("rule", "static"),
    "exhaustive_oracle": ("exhaustive", "dijkstra"),
    "dijkstra_routing": ("pso", "dijkstra"),
    "random_aco": ("random", "aco"),
    "pso_static": ("pso", "static"),
    "edge_only": ("pso", "aco"),
    "full_participation": ("all", "dijkstra"),
}


# -- aggregation -------------------------------------------------------------------


def aggregate(updates: Sequence[tuple[ModelParams, int]]) -> ModelParams:
    """Sample-weighted mean of client parameters, summed in the order given."""
    if not updates:
        raise EmptyUpdateSet("no client updates to aggregate")
    dim = updates[0][0].dim
    total = 0
    for w, n_i in updates:
        if w.dim != dim:
            raise DimensionMismatch(f"update dims differ: {w.dim} vs {dim}")
        if n_i < 1:
            raise ValueError("every client must contribute at least one sample")
        total += int(n_i)
    out = np.zeros(dim)
    for w, n_i in updates:
        out += (n_i / total) * w.values
    return ModelParams(out)


# -- energy ------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyRow:
    device_id: int
    e_train_j: float
    e_comm_j: float
    e_time_j: float
    total_j: float
    train_time_s: float
    comm_time_s: float

    @property
    def time_s(self) -> float:
        return self.train_time_s + self.comm_time_s


def project_round_energy(
    device: Device,
    model_size_mb: float,
    route_estimate_s: float,
    train_steps: int,
    cost_per_step: float = 1e6,
    idle_power_w: float = 0.5,
) -> EnergyRow:
    """Per-device round energy: training + transmission + idle draw over the
    device's modeled busy time (training plus transmission).

    ``route_estimate_s`` is the transmission time of the route the update is
    expected to take; ``model_size_mb`` is folded into it already and is kept
    in the signature for callers that estimate from a bandwidth instead.
    """
    e_train = train_steps * device.energy_per_step_j
    train_time = train_steps * (cost_per_step / device.compute_capacity)
    e_comm = device.tx_power_w * route_estimate_s
    e_time = idle_power_w * (train_time + route_estimate_s)
    return EnergyRow(device.id, e_train, e_comm, e_time, e_train + e_comm + e_time, train_time, route_estimate_s)


@dataclass(frozen=True)
class EnergyLedger:
    rows: tuple[EnergyRow, ...]

    @property
    def total_j(self) -> float:
        total = 0.0
        for r in self.rows:
            total += r.total_j
        return total

    def check(self) -> None:
        for r in self.rows:
            if r.total_j != r.e_train_j + r.e_comm_j + r.e_time_j:
                raise LedgerViolation(f"device {r.device_id}: components do not sum to total")
            if min(r.e_train_j, r.e_comm_j, r.e_time_j) < 0:
                raise LedgerViolation(f"device {r.device_id}: negative energy component")


# -- metrics -----------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectiveBreakdown:
    energy_j: float
    time_s: float
    loss: float
    value: float


@dataclass(frozen=True)
class RoundMetrics:
    round_index: int
    selected: tuple[int, ...]
    dropped: tuple[int, ...]
    routes: dict[int, tuple[int, ...]]
    route_costs: dict[int, float]
    global_loss: float
    accuracy: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    comm_cost_total: float
    comm_cost_per_client: float
    comm_mb_per_client: float
    latency_s: float
    ledger: EnergyLedger
    energy_total_j: float
    time_total_s: float
    objective_value: float
    participation_count: int
    aggregation_weight_sum: float
    selection_fitness: Optional[float] = None
    selection_trace: tuple[float, ...] = ()
    routing_trace: dict[int, tuple[float, ...]] = field(default_factory=dict)

    # scalar columns written to the per-round CSV, in order
    CSV_FIELDS = (
        "round_index",
        "participation_count",
        "n_dropped",
        "global_loss",
        "accuracy",
        "precision_macro",
        "recall_macro",
        "f1_macro",
        "comm_cost_total",
        "comm_cost_per_client",
        "comm_mb_per_client",
        "latency_s",
        "energy_total_j",
        "time_total_s",
        "objective_value",
        "aggregation_weight_sum",
        "selection_fitness",
        "selected",
    )

    def csv_row(self) -> dict:
        row = {k: getattr(self, k) for k in self.CSV_FIELDS if k not in ("n_dropped", "selected")}
        row["n_dropped"] = len(self.dropped)
        row["selected"] = " ".join(str(d) for d in self.selected)
        return row

    def to_dict(self) -> dict:
        d = asdict(self)
        d["routes"] = {str(k): list(v) for k, v in self.routes.items()}
        d["route_costs"] = {str(k): v for k, v in self.route_costs.items()}
        d["routing_trace"] = {str(k): list(v) for k, v in self.routing_trace.items()}
        d["selected"] = list(self.selected)
        d["dropped"] = list(self.dropped)
        d["selection_trace"] = list(self.selection_trace)
        d["ledger"] = {"rows": [asdict(r) for r in self.ledger.rows], "total_j": self.ledger.total_j}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RoundMetrics":
        d = dict(d)
        d["routes"] = {int(k): tuple(v) for k, v in d["routes"].items()}
        d["route_costs"] = {int(k): float(v) for k, v in d["route_costs"].items()}
        d["routing_trace"] = {int(k): tuple(v) for k, v in d.get("routing_trace", {}).items()}
        d["selected"] = tuple(d["selected"])
        d["dropped"] = tuple(d["dropped"])
        d["selection_trace"] = tuple(d.get("selection_trace", ()))
        d["ledger"] = EnergyLedger(tuple(EnergyRow(**r) for r in d["ledger"]["rows"]))
        return cls(**d)


def global_objective(metrics: RoundMetrics, weights: ObjectiveWeights) -> ObjectiveBreakdown:
    e, t, loss = metrics.energy_total_j, metrics.time_total_s, metrics.global_loss
    value = weights.alpha_energy * e + weights.gamma_time * t + weights.beta_loss * loss
    return ObjectiveBreakdown(e, t, loss, value)


# -- simulation state ----------------------------------------------------------------


@dataclass
class SimulationState:
    config: RunConfig
    seed: int
    graph: NetworkGraph
    devices: tuple[Device, ...]  # current batteries
    capacity_j: dict[int, float]  # initial batteries
    train: Dataset
    test: Dataset
    assignment: PartitionAssignment
    device_data: dict[int, Dataset]
    relevance: np.ndarray
    similarity: np.ndarray
    global_params: ModelParams
    comm_estimate: dict[int, float]
    random_k: int
    round_index: int = 0
    history: list[RoundMetrics] = field(default_factory=list)
    tau: Optional[np.ndarray] = None
    halted: Optional[str] = None

    @property
    def device_ids(self) -> tuple[int, ...]:
        return tuple(d.id for d in self.devices)


def direct_route_estimate(device_id: int, g: NetworkGraph, cfg: RunConfig) -> float:
    """Transmission-time estimate before any route has been realised: the
    device's own cloud link if it has one, else the best link the network could
    offer (top of the bandwidth range, bottom of the latency range)."""
    m = cfg.training.model_size_mb
    key = (device_id, g.cloud_id) if device_id < g.cloud_id else (g.cloud_id, device_id)
    if key in g.link_index:
        ln = g.links[g.link_index[key]]
        return m / ln.bandwidth_mbps + ln.latency_ms / 1000.0
    return m / cfg.topology.bw_range[1] + cfg.topology.latency_range_ms[0] / 1000.0


def init_state(cfg: RunConfig, seed: int, random_k: Optional[int] = None) -> SimulationState:
    topo = cfg.topology
    if cfg.strategy == "edge_only":
        topo = topo.model_copy(update={"n_relays": 0})
    graph = build_topology(topo, seed)
    devices = make_fleet(graph, cfg.fleet, seed)
    ds = cfg.data
    full = datagen.make_synthetic_dataset(ds.n_samples + ds.n_test, ds.n_features, ds.num_classes, ds.class_sep, seed)
    train, test = full.split(ds.n_samples)
    ids = [d.id for d in devices]
    assignment = datagen.dirichlet_partition(train, len(ids), ds.dirichlet_alpha, seed, ds.coverage, device_ids=ids)
    device_data = {d: train.subset(assignment.indices(d)) for d in ids}
    relevance = np.array([datagen.device_stats(assignment, train, d).relevance for d in ids])
    similarity = datagen.similarity_matrix(datagen.histogram_matrix(assignment, train, ids))
    if random_k is None:
        random_k = cfg.baselines.random_k or max(1, round(0.1 * len(ids)))
    return SimulationState(
        config=cfg,
        seed=seed,
        graph=graph,
        devices=devices,
        capacity_j={d.id: d.battery_j for d in devices},
        train=train,
        test=test,
        assignment=assignment,
        device_data=device_data,
        relevance=relevance,
        similarity=similarity,
        global_params=ModelParams.zeros(localmodel.param_dim(ds.n_features, ds.num_classes)),
        comm_estimate={d: direct_route_estimate(d, graph, cfg) for d in ids},
        random_k=int(random_k),
    )


def _project_all(state: SimulationState) -> list[EnergyRow]:
    cfg = state.config
    return [
        project_round_energy(
            d,
            cfg.training.model_size_mb,
            state.comm_estimate[d.id],
            cfg.training.steps,
            cfg.training.cost_per_step,
            cfg.fleet.idle_power_w,
        )
        for d in state.devices
    ]


def _select(state: SimulationState, how: str, ctx: pso.FitnessContext, threads: int):
    cfg = state.config
    eligible = [d for d, ok in zip(ctx.device_ids, ctx.eligible) if ok]
    r = state.round_index
    if how == "pso":
        res = pso.select_devices(ctx, cfg.pso, seed=rng.derive(state.seed, "pso", r), threads=threads)
        return res.subset, res.fitness, res.trace
    if how == "random":
        k = min(state.random_k, len(eligible))
        return baselines.random_selection(eligible, k, rng.derive(state.seed, "random", r)), None, ()
    if how == "rule":
        rules = baselines.Rules(min_samples=cfg.baselines.min_samples)
        pool = [
            d
            for d in state.devices
            if ctx.eligible[ctx.index_of(d.id)] and d.battery_j >= cfg.baselines.min_battery_frac * state.capacity_j[d.id]
        ]
        counts = {d: len(ds.labels) for d, ds in state.device_data.items()}
        return baselines.rule_based_selection(pool, counts, rules), None, ()
    if how == "exhaustive":
        res = baselines.exhaustive_selection_oracle(ctx)
        return res.subset, res.fitness, ()
    if how == "all":
        return tuple(eligible), None, ()
    raise ValueError(f"unknown selection rule {how!r}")


def _route(state: SimulationState, how: str, selected: Sequence[int], threads: int):
    cfg = state.config
    g, m = state.graph, cfg.training.model_size_mb
    if how == "aco":
        tau0 = state.tau if cfg.aco.persist_pheromone else None
        res = aco.optimize_routes(
            selected, g, cfg.aco, cfg.aco.mode, rng.derive(state.seed, "aco", state.round_index), m, tau0, threads, strict=False
        )
        routes = dict(res.routes)
        for d in res.unrouted:
            # every ant dead-ended: fall back to the fixed fewest-hop route
            log.warning("round %d: no ant reached the cloud from device %d; using fixed routing", state.round_index, d)
            routes[d] = baselines.static_shortest_routing(d, g, m)
        return routes, res.trace, res.tau
    fn = baselines.dijkstra_routing if how == "dijkstra" else baselines.static_shortest_routing
    return {d: fn(d, g, m) for d in sorted(selected)}, {}, None


def run_round(
    state: SimulationState, threads: int = 1, selector: Optional[str] = None, router: Optional[str] = None
) -> tuple[SimulationState, RoundMetrics]:
    cfg = state.config
    sel_how, route_how = STRATEGIES[cfg.strategy]
    sel_how, route_how = selector or sel_how, router or route_how
    ids = state.device_ids
    by_id = {d.id: d for d in state.devices}

    projected = _project_all(state)
    eligible = np.array(
        [by_id[r.device_id].battery_j >= r.total_j and len(state.device_data[r.device_id].labels) >= 1 for r in projected]
    )
    if not eligible.any():
        raise NoEligibleDevices(f"round {state.round_index}: no device can afford a round", state.history)
    ctx = pso.FitnessContext(
        ids, np.array([r.total_j for r in projected]), state.relevance, state.similarity, eligible, cfg.fitness
    )
    selected, sel_fit, sel_trace = _select(state, sel_how, ctx, threads)
    selected = tuple(sorted(selected))
    if not selected:
        raise NoEligibleDevices(f"round {state.round_index}: selection rule chose no device", state.history)

    steps, lr = cfg.training.steps, cfg.training.lr

    def train(d: int) -> localmodel.TrainReport:
        return localmodel.local_train(
            state.global_params, state.device_data[d], steps, lr, by_id[d], seed=state.seed, cost_per_step=cfg.training.cost_per_step
        )

    if threads > 1 and len(selected) > 1:
        with ThreadPoolExecutor(threads) as ex:
            reports = dict(zip(selected, ex.map(train, selected)))
    else:
        reports = {d: train(d) for d in selected}

    routes, routing_trace, tau = _route(state, route_how, selected, threads)

    rows, dropped, new_devices = [], [], []
    kept: list[int] = []
    for dev in state.devices:
        if dev.id not in reports:
            new_devices.append(dev)
            continue
        rep, route = reports[dev.id], routes[dev.id]
        e_comm = dev.tx_power_w * route.cost
        e_time = cfg.fleet.idle_power_w * (rep.wall_time_model_s + route.cost)
        row = EnergyRow(
            dev.id, rep.energy_train_j, e_comm, e_time, rep.energy_train_j + e_comm + e_time, rep.wall_time_model_s, route.cost
        )
        rows.append(row)
        if row.total_j > dev.battery_j:
            # cannot finish the round: excluded from aggregation, battery untouched
            dropped.append(dev.id)
            new_devices.append(dev)
            continue
        kept.append(dev.id)
        new_devices.append(replace(dev, battery_j=dev.battery_j - row.total_j))
    ledger = EnergyLedger(tuple(rows))
    ledger.check()
    if any(d.battery_j < 0 for d in new_devices):
        raise LedgerViolation("battery went negative")

    n_kept = [len(state.device_data[d].labels) for d in kept]
    if kept:
        new_params = aggregate([(reports[d].updated_params, n) for d, n in zip(kept, n_kept)])
        weight_sum = sum(n / sum(n_kept) for n in n_kept)
    else:
        new_params, weight_sum = state.global_params, 0.0

    n_sel = sum(len(state.device_data[d].labels) for d in selected)
    global_loss = 0.0
    for d in selected:
        global_loss += (len(state.device_data[d].labels) / n_sel) * localmodel.local_loss(new_params, state.device_data[d])
    scores = localmodel.evaluate(new_params, state.test)

    m = cfg.training.model_size_mb
    comm_total = 0.0
    hops_total = 0
    for d in selected:
        comm_total += routes[d].cost
        hops_total += routes[d].n_hops
    energy_total = ledger.total_j
    time_total = 0.0
    for r in rows:
        time_total += r.time_s
    w = cfg.objective
    metrics = RoundMetrics(
        round_index=state.round_index,
        selected=selected,
        dropped=tuple(dropped),
        routes={d: routes[d].hops for d in selected},
        route_costs={d: routes[d].cost for d in selected},
        global_loss=global_loss,
        accuracy=scores["accuracy"],
        precision_macro=scores["precision_macro"],
        recall_macro=scores["recall_macro"],
        f1_macro=scores["f1_macro"],
        comm_cost_total=comm_total,
        comm_cost_per_client=comm_total / len(selected),
        comm_mb_per_client=m * hops_total / len(selected),
        latency_s=max(r.time_s for r in rows),
        ledger=ledger,
        energy_total_j=energy_total,
        time_total_s=time_total,
        objective_value=w.alpha_energy * energy_total + w.gamma_time * time_total + w.beta_loss * global_loss,
        participation_count=len(selected),
        aggregation_weight_sum=weight_sum,
        selection_fitness=sel_fit,
        selection_trace=tuple(sel_trace),
        routing_trace={d: tuple(t) for d, t in routing_trace.items()},
    )
    comm_estimate = dict(state.comm_estimate)
    for d in selected:
        comm_estimate[d] = routes[d].cost
    new_state = replace(
        state,
        devices=tuple(new_devices),
        global_params=new_params,
        comm_estimate=comm_estimate,
        round_index=state.round_index + 1,
        history=state.history + [metrics],
        tau=tau if tau is not None else state.tau,
    )
    return new_state, metrics


def run_simulation(
    cfg: RunConfig,
    seed: int,
    threads: Optional[int] = None,
    random_k: Optional[int] = None,
    resume: Optional[SimulationState] = None,
    on_round: Optional[Callable[[SimulationState, RoundMetrics], None]] = None,
) -> list[RoundMetrics]:
    """Run ``cfg.n_rounds`` rounds (counting rounds already in ``resume``).

    Running out of eligible devices ends the run early and returns the rounds
    completed so far; ``on_round`` sees every new round as it finishes.
    """
    state = resume if resume is not None else init_state(cfg, seed, random_k)
    threads = 1 if threads is None else threads
    while state.round_index < cfg.n_rounds:
        try:
            state, metrics = run_round(state, threads)
        except NoEligibleDevices as exc:
            log.warning("seed %d halted at round %d: %s", seed, state.round_index, exc)
            state.halted = str(exc)
            break
        if on_round is not None:
            on_round(state, metrics)
    return list(state.history)


def simulate(cfg: RunConfig, seed: int, threads: Optional[int] = None, random_k: Optional[int] = None) -> SimulationState:
    """Like ``run_simulation`` but returns the final state."""
    final: list[SimulationState] = []
    run_simulation(cfg, seed, threads, random_k, on_round=lambda s, _m: final.__setitem__(slice(None), [s]))
    return final[0] if final else init_state(cfg, seed, random_k)


# -- checkpoints -----------------------------------------------------------------------


def checkpoint_dict(state: SimulationState) -> dict:
    return {
        "format": "swarmfl-checkpoint",
        "version": 1,
        "config": materialize(state.config),
        "seed": state.seed,
        "round_index": state.round_index,
        "random_k": state.random_k,
        "global_params": state.global_params.values.tolist(),
        "batteries": {str(d.id): d.battery_j for d in state.devices},
        "comm_estimate": {str(k): v for k, v in state.comm_estimate.items()},
        "tau": None if state.tau is None else state.tau.tolist(),
        "halted": state.halted,
        "history": [m.to_dict() for m in state.history],
    }


def save_checkpoint(state: SimulationState, path: str | Path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(state)), encoding="utf-8")


def load_checkpoint(path: str | Path) -> SimulationState:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = RunConfig.model_validate(doc["config"])
    state = init_state(cfg, int(doc["seed"]), int(doc["random_k"]))
    batteries = {int(k): float(v) for k, v in doc["batteries"].items()}
    return replace(
        state,
        devices=tuple(replace(d, battery_j=batteries[d.id]) for d in state.devices),
        global_params=ModelParams(np.array(doc["global_params"])),
        comm_estimate={int(k): float(v) for k, v in doc["comm_estimate"].items()},
        round_index=int(doc["round_index"]),
        tau=None if doc["tau"] is None else np.array(doc["tau"]),
        halted=doc.get("halted"),
        history=[RoundMetrics.from_dict(m) for m in doc["history"]],
    )
