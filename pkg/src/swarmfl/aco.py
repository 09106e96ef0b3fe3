"""Ant-colony routing of model updates from selected devices to the cloud.

All selected devices share one pheromone vector (indexed like ``graph.links``).
Within an iteration every ant reads the same pheromone snapshot; deposits are
summed and applied once at the end of the iteration.
"""

from __future__ import annotations

from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import accumulate
from typing import Iterable, Literal, Optional, Sequence

import numpy as np

from . import rng
from .config import AcoSpec
from .domain import Link, NetworkGraph
from .errors import NoRouteFound, UnknownDevice

AcoParams = AcoSpec
Mode = Literal["latency", "bandwidth"]
EPS = 1e-9


@dataclass(frozen=True)
class Route:
    hops: tuple[int, ...]
    cost: float

    @property
    def device(self) -> int:
        return self.hops[0]

    @property
    def n_hops(self) -> int:
        return len(self.hops) - 1


def heuristic(link: Link, mode: Mode, b_max: float = 1.0) -> float:
    """Desirability of a link: reciprocal distance, or bandwidth relative to the
    best link in the graph (higher bandwidth is more attractive)."""
    if mode == "latency":
        return 1.0 / (link.distance_m + EPS)
    if mode == "bandwidth":
        return link.bandwidth_mbps / b_max
    raise ValueError(f"unknown heuristic mode {mode!r}")


def heuristic_vector(g: NetworkGraph, mode: Mode) -> np.ndarray:
    b_max = g.max_bandwidth
    return np.array([heuristic(ln, mode, b_max) for ln in g.links], dtype=np.float64)


def init_pheromones(g: NetworkGraph, params: AcoParams) -> np.ndarray:
    return np.full(len(g.links), float(params.tau_init))


def _weights(tau: np.ndarray, eta: np.ndarray, params: AcoParams) -> np.ndarray:
    return np.power(tau, params.alpha_pher) * np.power(eta, params.beta_heur)


def transition_probabilities(
    current: int,
    visited: Iterable[int],
    g: NetworkGraph,
    tau: np.ndarray,
    params: AcoParams,
    mode: Mode,
) -> tuple[list[int], np.ndarray]:
    """Admissible (unvisited) neighbours of ``current`` and their selection
    probabilities. A dead end yields two empty containers."""
    seen = set(visited)
    eta = heuristic_vector(g, mode)
    nbrs, lidx = [], []
    for v, li in g.adjacency[current]:
        if v not in seen:
            nbrs.append(v)
            lidx.append(li)
    if not nbrs:
        return [], np.empty(0)
    w = _weights(tau[lidx], eta[lidx], params)
    total = w.sum()
    if not total > 0:
        return nbrs, np.full(len(nbrs), 1.0 / len(nbrs))
    return nbrs, w / total


def route_cost(route: Sequence[int] | Route, g: NetworkGraph, update_size_mb: float) -> float:
    """Sum over hops of transmission time (size / bandwidth) plus link latency, in seconds."""
    hops = route.hops if isinstance(route, Route) else tuple(route)
    cost = 0.0
    for a, b in zip(hops, hops[1:]):
        ln = g.link_between(a, b)
        cost += update_size_mb / ln.bandwidth_mbps + ln.latency_ms / 1000.0
    return cost


def _walk(device: int, g: NetworkGraph, link_w: Sequence[float], uniforms: Sequence[float]) -> Optional[tuple[int, ...]]:
    path = [device]
    visited = {device}
    cur = device
    for u in uniforms:
        if cur == g.cloud_id:
            return tuple(path)
        nbrs, ws = [], []
        for v, li in g.adjacency[cur]:
            if v not in visited:
                nbrs.append(v)
                ws.append(link_w[li])
        if not nbrs:
            return None
        cum = list(accumulate(ws))
        total = cum[-1]
        if total > 0:
            k = min(bisect_right(cum, u * total), len(nbrs) - 1)
        else:
            k = min(int(u * len(nbrs)), len(nbrs) - 1)
        cur = nbrs[k]
        path.append(cur)
        visited.add(cur)
    return tuple(path) if cur == g.cloud_id else None


def construct_route(
    device: int,
    g: NetworkGraph,
    tau: np.ndarray,
    params: AcoParams,
    mode: Mode,
    rng_stream: np.random.Generator | Sequence[float],
    update_size_mb: float = 0.0,
) -> Optional[Route]:
    """Sample one simple path to the cloud; ``None`` signals a dead end."""
    if device not in g.adjacency:
        raise UnknownDevice(device)
    n = len(g.nodes)
    uniforms = rng_stream.random(n) if isinstance(rng_stream, np.random.Generator) else rng_stream
    link_w = _weights(tau, heuristic_vector(g, mode), params).tolist()
    hops = _walk(device, g, link_w, uniforms)
    if hops is None:
        return None
    return Route(hops, route_cost(hops, g, update_size_mb))


def update_pheromones(tau: np.ndarray, routes: Iterable[Route], params: AcoParams, g: NetworkGraph) -> np.ndarray:
    """Evaporate every link by (1 - rho), add q/cost along each completed route,
    then apply the tau_min floor."""
    deposit = np.zeros_like(tau)
    for r in routes:
        amount = params.q_deposit / max(r.cost, EPS)
        for a, b in zip(r.hops, r.hops[1:]):
            deposit[g.link_index[(a, b) if a <= b else (b, a)]] += amount
    out = (1.0 - params.rho) * tau + deposit
    return np.maximum(out, params.tau_min)


@dataclass(frozen=True)
class AcoResult:
    routes: dict[int, Route]
    trace: dict[int, tuple[float, ...]]  # device -> best cost after each iteration
    tau: np.ndarray
    dead_ends: int
    unrouted: tuple[int, ...] = ()


def optimize_routes(
    selected: Iterable[int],
    g: NetworkGraph,
    params: AcoParams,
    mode: Mode,
    seed: int,
    update_size_mb: float = 10.0,
    tau: Optional[np.ndarray] = None,
    threads: int = 1,
    strict: bool = True,
) -> AcoResult:
    """Best route per selected device after ``params.n_iters`` colony iterations.

    With ``strict=False`` a device whose every ant dead-ended is left out of
    ``routes`` (and listed in ``unrouted``) instead of raising NoRouteFound.
    """
    devices = sorted(set(int(d) for d in selected))
    for d in devices:
        if d not in g.adjacency or g.node_index[d].kind == "cloud":
            raise UnknownDevice(d)
    tau = init_pheromones(g, params) if tau is None else np.array(tau, dtype=np.float64)
    eta = heuristic_vector(g, mode)
    n_nodes = len(g.nodes)
    best: dict[int, Optional[Route]] = {d: None for d in devices}
    trace: dict[int, list[float]] = {d: [] for d in devices}
    dead = 0

    def colony(d: int, it: int, link_w: list[float]) -> list[Optional[Route]]:
        u = rng.stream(seed, "aco", d, it).random((params.n_ants, n_nodes))
        out = []
        for a in range(params.n_ants):
            hops = _walk(d, g, link_w, u[a])
            out.append(None if hops is None else Route(hops, route_cost(hops, g, update_size_mb)))
        return out

    ex = ThreadPoolExecutor(threads) if threads > 1 and len(devices) > 1 else None
    try:
        for it in range(params.n_iters):
            link_w = _weights(tau, eta, params).tolist()
            if ex is None:
                batches = [colony(d, it, link_w) for d in devices]
            else:
                batches = list(ex.map(lambda d: colony(d, it, link_w), devices))
            completed: list[Route] = []
            for d, batch in zip(devices, batches):
                for r in batch:
                    if r is None:
                        dead += 1
                        continue
                    completed.append(r)
                    if best[d] is None or r.cost < best[d].cost:
                        best[d] = r
                trace[d].append(best[d].cost if best[d] is not None else float("inf"))
            tau = update_pheromones(tau, completed, params, g)
    finally:
        if ex is not None:
            ex.shutdown()

    missing = tuple(d for d in devices if best[d] is None)
    if missing and strict:
        raise NoRouteFound(f"every ant dead-ended for devices {list(missing)}")
    routes = {d: best[d] for d in devices if best[d] is not None}
    return AcoResult(routes, {d: tuple(t) for d, t in trace.items() if d in routes}, tau, dead, missing)
