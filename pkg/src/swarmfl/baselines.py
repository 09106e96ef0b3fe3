"""Control strategies and exact oracles."""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import rng
from .aco import Route, route_cost
from .domain import Device, NetworkGraph
from .errors import NotEnoughEligible, NoRouteFound, TooManyDevices
from .pso import FitnessContext

MAX_EXHAUSTIVE = 20


def random_selection(eligible: Iterable[int], k: int, seed: int) -> tuple[int, ...]:
    """Uniform k-subset of the eligible ids."""
    pool = sorted(set(int(d) for d in eligible))
    if not 1 <= k <= len(pool):
        raise NotEnoughEligible(f"asked for {k} devices, {len(pool)} eligible")
    pick = rng.stream(seed, "random_selection").choice(len(pool), size=k, replace=False)
    return tuple(sorted(pool[i] for i in pick))


@dataclass(frozen=True)
class Rules:
    min_battery_j: float = 0.0
    min_samples: int = 0


def rule_based_selection(
    devices: Sequence[Device], sample_counts: Mapping[int, int], rules: Rules
) -> tuple[int, ...]:
    return tuple(
        sorted(
            d.id
            for d in devices
            if d.battery_j >= rules.min_battery_j and sample_counts.get(d.id, 0) >= rules.min_samples
        )
    )


@dataclass(frozen=True)
class OracleResult:
    subset: tuple[int, ...]
    fitness: float


def exhaustive_selection_oracle(ctx: FitnessContext) -> OracleResult:
    """Exact fitness minimiser over every nonempty eligible subset.

    Ties go to the lexicographically smallest id tuple.
    """
    elig = np.flatnonzero(ctx.eligible)
    if ctx.n > MAX_EXHAUSTIVE:
        raise TooManyDevices(f"{ctx.n} devices; exhaustive search is limited to {MAX_EXHAUSTIVE}")
    if elig.size == 0:
        raise NotEnoughEligible("no eligible devices")
    best_fit, best_ids = np.inf, None
    mask = np.zeros(ctx.n, dtype=bool)
    for m in range(1, 1 << elig.size):
        mask[:] = False
        mask[elig[[b for b in range(elig.size) if (m >> b) & 1]]] = True
        f = ctx.mask_fitness(mask)
        ids = tuple(ctx.device_ids[i] for i in np.flatnonzero(mask))
        if f < best_fit or (f == best_fit and ids < best_ids):
            best_fit, best_ids = f, ids
    return OracleResult(best_ids, float(best_fit))


def _edge_weight(g: NetworkGraph, li: int, update_size_mb: float) -> float:
    ln = g.links[li]
    return update_size_mb / ln.bandwidth_mbps + ln.latency_ms / 1000.0


def dijkstra_routing(device: int, g: NetworkGraph, update_size_mb: float) -> Route:
    """Minimum ``route_cost`` path from ``device`` to the cloud."""
    dist = {device: 0.0}
    prev: dict[int, int] = {}
    heap = [(0.0, device)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == g.cloud_id:
            break
        for v, li in g.adjacency[u]:
            nd = d + _edge_weight(g, li, update_size_mb)
            if nd < dist.get(v, np.inf):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if g.cloud_id not in done:
        raise NoRouteFound(f"device {device} cannot reach the cloud")
    hops = [g.cloud_id]
    while hops[-1] != device:
        hops.append(prev[hops[-1]])
    hops.reverse()
    return Route(tuple(hops), route_cost(hops, g, update_size_mb))


def static_shortest_routing(device: int, g: NetworkGraph, update_size_mb: float) -> Route:
    """Fewest-hop path, ignoring link quality (the fixed-routing control arm).

    Breadth-first from the device with neighbours visited in ascending id, so
    the route is a fixed function of the topology.
    """
    prev: dict[int, Optional[int]] = {device: None}
    q = deque([device])
    while q:
        u = q.popleft()
        if u == g.cloud_id:
            break
        for v, _ in g.adjacency[u]:
            if v not in prev:
                prev[v] = u
                q.append(v)
    if g.cloud_id not in prev:
        raise NoRouteFound(f"device {device} cannot reach the cloud")
    hops = [g.cloud_id]
    while prev[hops[-1]] is not None:
        hops.append(prev[hops[-1]])
    hops.reverse()
    return Route(tuple(hops), route_cost(hops, g, update_size_mb))
