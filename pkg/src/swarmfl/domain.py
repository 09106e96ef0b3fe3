"""Devices, network topology and model parameters.

Node ids are laid out as ``devices 0..n-1``, ``relays n..n+r-1`` and the cloud
last. Links are undirected and stored once with ``src < dst``.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Literal, Optional

import numpy as np
from scipy.spatial import cKDTree

from . import rng
from .config import FleetSpec, ObjectiveWeights, TopologySpec
from .errors import InfeasibleTopology

__all__ = [
    "Device",
    "Node",
    "Link",
    "NetworkGraph",
    "ModelParams",
    "ObjectiveWeights",
    "Issue",
    "ValidationReport",
    "build_topology",
    "validate_graph",
    "make_fleet",
    "graph_to_json",
    "graph_from_json",
]

NodeKind = Literal["device", "relay", "cloud"]


@dataclass(frozen=True)
class Device:
    id: int
    compute_capacity: float
    battery_j: float
    energy_per_step_j: float
    tx_power_w: float
    position: tuple[float, float]
    dataset_ref: int

    def __post_init__(self):
        if self.compute_capacity <= 0:
            raise ValueError("compute_capacity must be > 0")
        if self.battery_j < 0:
            raise ValueError("battery_j must be >= 0")
        if self.energy_per_step_j <= 0 or self.tx_power_w <= 0:
            raise ValueError("energy_per_step_j and tx_power_w must be > 0")


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    position: Optional[tuple[float, float]] = None


@dataclass(frozen=True, order=True)
class Link:
    src: int
    dst: int
    bandwidth_mbps: float
    latency_ms: float
    distance_m: float

    @property
    def key(self) -> tuple[int, int]:
        return (self.src, self.dst) if self.src <= self.dst else (self.dst, self.src)

    def other(self, node: int) -> int:
        return self.dst if node == self.src else self.src


@dataclass(frozen=True)
class NetworkGraph:
    nodes: tuple[Node, ...]
    links: tuple[Link, ...]
    cloud_id: int

    @cached_property
    def node_index(self) -> dict[int, Node]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def adjacency(self) -> dict[int, list[tuple[int, int]]]:
        """node -> sorted list of (neighbor, link index)."""
        adj: dict[int, list[tuple[int, int]]] = {n.id: [] for n in self.nodes}
        for idx, ln in enumerate(self.links):
            adj.setdefault(ln.src, []).append((ln.dst, idx))
            adj.setdefault(ln.dst, []).append((ln.src, idx))
        for lst in adj.values():
            lst.sort()
        return adj

    @cached_property
    def link_index(self) -> dict[tuple[int, int], int]:
        return {ln.key: i for i, ln in enumerate(self.links)}

    def link_between(self, a: int, b: int) -> Link:
        return self.links[self.link_index[(a, b) if a <= b else (b, a)]]

    @property
    def device_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == "device"]

    @property
    def relay_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == "relay"]

    @cached_property
    def max_bandwidth(self) -> float:
        return max((ln.bandwidth_mbps for ln in self.links), default=1.0)


@dataclass(frozen=True)
class ModelParams:
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True).ravel()
        if not np.all(np.isfinite(arr)):
            raise ValueError("model parameters must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @classmethod
    def zeros(cls, dim: int) -> "ModelParams":
        return cls(np.zeros(dim))


# -- topology generation -----------------------------------------------------

# Stable keys for link attribute streams, so that dropping relays leaves
# device-device links untouched.
_RELAY_KEY = 1 << 32
_CLOUD_KEY = 1 << 33


def _dist(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _draw_links(seed, name, row_key, pairs, spec: TopologySpec, positions) -> list[Link]:
    if not pairs:
        return []
    g = rng.stream(seed, "topology.link", name, row_key)
    k = len(pairs)
    bw = g.uniform(spec.bw_range[0], spec.bw_range[1], size=k)
    lat = g.uniform(spec.latency_range_ms[0], spec.latency_range_ms[1], size=k)
    out = []
    for (a, b), bwi, lati in zip(pairs, bw, lat):
        lo, hi = (a, b) if a < b else (b, a)
        out.append(Link(lo, hi, float(bwi), float(lati), _dist(positions[a], positions[b])))
    return out


def _reach_from(cloud: int, adj: dict[int, set[int]]) -> set[int]:
    seen = {cloud}
    q = deque([cloud])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                q.append(v)
    return seen


def build_topology(spec: TopologySpec, seed: int) -> NetworkGraph:
    """Random geometric graph over a square area with a cloud gateway at its centre.

    Device-device, device-relay and device-cloud links exist iff the endpoints
    are within ``connection_radius_m``. Every relay has a backhaul link to the
    cloud. Components left unreachable are joined by linking their node nearest
    to the cloud side (a relay or the cloud itself); at most
    ``max_repair_links`` (default ``n_devices``) such links may be added.
    """
    n, r = spec.n_devices, spec.relays
    if not 1 <= n <= 10000:
        raise ValueError("n_devices must be in [1, 10000]")
    dev_pos = rng.stream(seed, "topology.devices").uniform(0.0, spec.area_m, size=(n, 2))
    relay_pos = rng.stream(seed, "topology.relays").uniform(0.0, spec.area_m, size=(r, 2))
    cloud = n + r
    center = (spec.area_m / 2.0, spec.area_m / 2.0)

    positions: dict[int, tuple[float, float]] = {}
    nodes: list[Node] = []
    for i in range(n):
        positions[i] = (float(dev_pos[i, 0]), float(dev_pos[i, 1]))
        nodes.append(Node(i, "device", positions[i]))
    for j in range(r):
        positions[n + j] = (float(relay_pos[j, 0]), float(relay_pos[j, 1]))
        nodes.append(Node(n + j, "relay", positions[n + j]))
    positions[cloud] = center
    nodes.append(Node(cloud, "cloud", center))

    radius = spec.connection_radius_m
    dev_tree = cKDTree(dev_pos)
    dd_rows: dict[int, list[int]] = {}
    for a, b in dev_tree.query_pairs(radius, output_type="ndarray").tolist():
        lo, hi = min(a, b), max(a, b)
        dd_rows.setdefault(lo, []).append(hi)
    dr_rows: dict[int, list[int]] = {}
    if r:
        for a, hits in enumerate(dev_tree.query_ball_tree(cKDTree(relay_pos), radius)):
            if hits:
                dr_rows[a] = sorted(hits)

    links: list[Link] = []
    for a in sorted(dd_rows):
        links += _draw_links(seed, "dd", a, [(a, b) for b in sorted(dd_rows[a])], spec, positions)
    for a in sorted(dr_rows):
        links += _draw_links(seed, "dr", a, [(a, n + j) for j in dr_rows[a]], spec, positions)
    for a in range(n):
        if _dist(positions[a], center) <= radius:
            links += _draw_links(seed, "dc", a, [(a, cloud)], spec, positions)
    for j in range(r):
        links += _draw_links(seed, "rc", _RELAY_KEY + j, [(n + j, cloud)], spec, positions)

    adj: dict[int, set[int]] = {nd.id: set() for nd in nodes}
    for ln in links:
        adj[ln.src].add(ln.dst)
        adj[ln.dst].add(ln.src)

    budget = n if spec.max_repair_links is None else spec.max_repair_links
    gateways = [n + j for j in range(r)] + [cloud]
    gw_pos = np.array([positions[gid] for gid in gateways])
    repairs = 0
    reached = _reach_from(cloud, adj)
    while len(reached) < len(nodes):
        start = min(i for i in range(n) if i not in reached)
        comp = sorted(_reach_from(start, adj))
        if repairs >= budget:
            raise InfeasibleTopology(
                f"graph still disconnected after {repairs} repair links (budget {budget}); "
                "increase connection_radius_m or n_relays"
            )
        comp_pos = np.array([positions[c] for c in comp])
        d = np.hypot(comp_pos[:, None, 0] - gw_pos[None, :, 0], comp_pos[:, None, 1] - gw_pos[None, :, 1])
        ci, gi = np.unravel_index(int(np.argmin(d)), d.shape)
        u, v = comp[ci], gateways[gi]
        links += _draw_links(seed, "repair", u * (cloud + 1) + v, [(u, v)], spec, positions)
        adj[u].add(v)
        adj[v].add(u)
        repairs += 1
        reached = _reach_from(cloud, adj)

    links.sort(key=lambda ln: (ln.src, ln.dst))
    return NetworkGraph(tuple(nodes), tuple(links), cloud)


# -- validation ----------------------------------------------------------------


@dataclass(frozen=True)
class Issue:
    kind: str
    node: Optional[int] = None
    link: Optional[tuple[int, int]] = None

    def __str__(self) -> str:
        where = self.node if self.node is not None else self.link
        return self.kind if where is None else f"{self.kind}({where})"


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def kinds(self) -> set[str]:
        return {i.kind for i in self.issues}

    def __contains__(self, item) -> bool:
        if isinstance(item, str):
            return item in self.kinds()
        return item in self.issues


def validate_graph(g: NetworkGraph) -> ValidationReport:
    issues: list[Issue] = []
    ids = [nd.id for nd in g.nodes]
    id_set = set(ids)
    if len(id_set) != len(ids):
        seen: set[int] = set()
        for i in ids:
            if i in seen:
                issues.append(Issue("DuplicateNode", node=i))
            seen.add(i)
    clouds = [nd.id for nd in g.nodes if nd.kind == "cloud"]
    if g.cloud_id not in clouds:
        issues.append(Issue("MissingCloud"))
    if len(clouds) > 1:
        issues.append(Issue("MultipleClouds"))

    adj: dict[int, set[int]] = {i: set() for i in id_set}
    pairs: set[tuple[int, int]] = set()
    pos = {nd.id: nd.position for nd in g.nodes}
    for ln in g.links:
        if ln.src == ln.dst:
            issues.append(Issue("SelfLoop", node=ln.src))
            continue
        if ln.src not in id_set or ln.dst not in id_set:
            issues.append(Issue("DanglingLink", link=ln.key))
            continue
        if ln.key in pairs:
            issues.append(Issue("DuplicateLink", link=ln.key))
        pairs.add(ln.key)
        if not ln.bandwidth_mbps > 0:
            issues.append(Issue("NonPositiveBandwidth", link=ln.key))
        if not ln.latency_ms >= 0:
            issues.append(Issue("NegativeLatency", link=ln.key))
        if not ln.distance_m >= 0:
            issues.append(Issue("NegativeDistance", link=ln.key))
        elif pos[ln.src] is not None and pos[ln.dst] is not None:
            if not math.isclose(ln.distance_m, _dist(pos[ln.src], pos[ln.dst]), rel_tol=1e-9, abs_tol=1e-9):
                issues.append(Issue("DistanceMismatch", link=ln.key))
        adj[ln.src].add(ln.dst)
        adj[ln.dst].add(ln.src)

    if g.cloud_id in id_set:
        reached = _reach_from(g.cloud_id, adj)
        for nd in g.nodes:
            if nd.kind == "device" and nd.id not in reached:
                issues.append(Issue("Disconnected", node=nd.id))
    return ValidationReport(tuple(issues))


# -- fleet -----------------------------------------------------------------------


def make_fleet(graph: NetworkGraph, spec: FleetSpec, seed: int) -> tuple[Device, ...]:
    """Draw per-device resources; each device's draws depend only on (seed, id)."""
    out = []
    for nd in graph.nodes:
        if nd.kind != "device":
            continue
        g = rng.stream(seed, "fleet", nd.id)
        compute, battery, eps = g.uniform(size=3)
        lo, hi = spec.compute_range
        blo, bhi = spec.battery_range_j
        elo, ehi = spec.energy_per_step_range_j
        out.append(
            Device(
                id=nd.id,
                compute_capacity=float(lo + (hi - lo) * compute),
                battery_j=float(blo + (bhi - blo) * battery),
                energy_per_step_j=float(elo + (ehi - elo) * eps),
                tx_power_w=spec.tx_power_w,
                position=nd.position,
                dataset_ref=nd.id,
            )
        )
    return tuple(out)


# -- JSON export -----------------------------------------------------------------


def graph_to_json(g: NetworkGraph) -> dict:
    return {
        "cloud_id": g.cloud_id,
        "nodes": [
            {"id": nd.id, "kind": nd.kind, "position": list(nd.position) if nd.position else None}
            for nd in g.nodes
        ],
        "links": [
            {
                "src": ln.src,
                "dst": ln.dst,
                "bandwidth_mbps": ln.bandwidth_mbps,
                "latency_ms": ln.latency_ms,
                "distance_m": ln.distance_m,
            }
            for ln in g.links
        ],
    }


def graph_from_json(doc: dict) -> NetworkGraph:
    nodes = tuple(
        Node(int(d["id"]), d["kind"], tuple(d["position"]) if d.get("position") is not None else None)
        for d in doc["nodes"]
    )
    links = tuple(
        Link(int(d["src"]), int(d["dst"]), float(d["bandwidth_mbps"]), float(d["latency_ms"]), float(d["distance_m"]))
        for d in doc["links"]
    )
    return NetworkGraph(nodes, links, int(doc["cloud_id"]))


def save_graph(g: NetworkGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(graph_to_json(g), indent=1), encoding="utf-8")


def load_graph(path: str | Path) -> NetworkGraph:
    return graph_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def make_graph(nodes: Iterable[tuple], links: Iterable[tuple], cloud_id: int) -> NetworkGraph:
    """Hand-built graphs for tests and debugging.

    ``nodes``: (id, kind[, (x, y)]); ``links``: (a, b, bandwidth_mbps, latency_ms[, distance_m]).
    Missing distances are computed from positions, or 1.0 if unpositioned.
    """
    nd = []
    for t in nodes:
        nd.append(Node(t[0], t[1], tuple(t[2]) if len(t) > 2 and t[2] is not None else None))
    pos = {n.id: n.position for n in nd}
    lk = []
    for t in links:
        a, b, bw, lat = t[:4]
        if len(t) > 4:
            dist = float(t[4])
        elif pos.get(a) is not None and pos.get(b) is not None:
            dist = _dist(pos[a], pos[b])
        else:
            dist = 1.0
        lo, hi = (a, b) if a <= b else (b, a)
        lk.append(Link(lo, hi, float(bw), float(lat), dist))
    lk.sort(key=lambda ln: (ln.src, ln.dst))
    return NetworkGraph(tuple(nd), tuple(lk), cloud_id)
