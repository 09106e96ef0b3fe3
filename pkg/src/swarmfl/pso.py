"""Binary particle swarm for per-round device selection.

Particles live in R^|D|; a position decodes to the subset of eligible devices
whose sigmoid(position) exceeds the threshold. Velocity/position follow the
inertia + cognitive + social update; the global best is refreshed
synchronously at the end of every iteration.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import rng
from .config import FitnessWeights, PsoSpec
from .errors import IneligibleDevice, NoEligibleDevices, UnknownDevice

# (particle_id, iteration, n) -> (r1, r2); lets tests pin the random factors.
RandHook = Callable[[int, int, int], tuple[np.ndarray, np.ndarray]]


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


@dataclass(frozen=True)
class FitnessContext:
    """Everything the fitness needs, indexed by position in ``device_ids``."""

    device_ids: tuple[int, ...]
    energy: np.ndarray  # projected joules per device
    relevance: np.ndarray
    similarity: np.ndarray  # pairwise 1 - TV of label histograms
    eligible: np.ndarray
    weights: FitnessWeights = FitnessWeights()

    def __post_init__(self):
        ids = tuple(int(i) for i in self.device_ids)
        if list(ids) != sorted(set(ids)):
            raise ValueError("device_ids must be unique and ascending")
        object.__setattr__(self, "device_ids", ids)
        n = len(ids)
        for name in ("energy", "relevance", "eligible"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        if np.asarray(self.similarity).shape != (n, n):
            raise ValueError(f"similarity must have shape ({n}, {n})")
        object.__setattr__(self, "energy", np.asarray(self.energy, dtype=np.float64))
        object.__setattr__(self, "relevance", np.asarray(self.relevance, dtype=np.float64))
        object.__setattr__(self, "similarity", np.asarray(self.similarity, dtype=np.float64))
        object.__setattr__(self, "eligible", np.asarray(self.eligible, dtype=bool))

    @property
    def n(self) -> int:
        return len(self.device_ids)

    @property
    def energy_norm(self) -> np.ndarray:
        top = float(self.energy.max()) if self.n else 0.0
        return self.energy / top if top > 0 else np.zeros_like(self.energy)

    def index_of(self, device_id: int) -> int:
        try:
            return self._pos[device_id]
        except KeyError:
            raise UnknownDevice(device_id) from None

    @property
    def _pos(self) -> dict[int, int]:
        cache = self.__dict__.get("_pos_cache")
        if cache is None:
            cache = {d: i for i, d in enumerate(self.device_ids)}
            object.__setattr__(self, "_pos_cache", cache)
        return cache

    def mask_fitness(self, mask: np.ndarray) -> float:
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return 0.0
        w = self.weights
        total = 0.0
        if w.alpha_e:
            total += w.alpha_e * float(self.energy_norm[idx].sum())
        if w.beta_r:
            total += w.beta_r * float((1.0 - self.relevance[idx]).sum())
        if w.gamma_d and idx.size > 1:
            # redundancy of each member against the members before it (ascending id)
            sub = np.tril(self.similarity[np.ix_(idx, idx)], -1)
            total += w.gamma_d * float(sub.max(axis=1).sum())
        return total


def fitness(subset: Iterable[int], ctx: FitnessContext) -> float:
    """Weighted energy + (1 - relevance) + incremental redundancy of ``subset``."""
    mask = np.zeros(ctx.n, dtype=bool)
    for d in subset:
        i = ctx.index_of(d)
        if not ctx.eligible[i]:
            raise IneligibleDevice(d)
        mask[i] = True
    return ctx.mask_fitness(mask)


def decode_mask(position: np.ndarray, ctx: FitnessContext, threshold: float = 0.5) -> np.ndarray:
    position = np.asarray(position, dtype=np.float64)
    if position.shape != (ctx.n,):
        raise ValueError(f"position must have length {ctx.n}")
    mask = (sigmoid(position) > threshold) & ctx.eligible
    if not mask.any() and ctx.eligible.any():
        # raw positions rank identically to sigmoid values without saturating
        cand = np.where(ctx.eligible, position, -np.inf)
        mask[int(np.argmax(cand))] = True
    return mask


def decode(position: np.ndarray, ctx: FitnessContext, threshold: float = 0.5) -> tuple[int, ...]:
    mask = decode_mask(position, ctx, threshold)
    return tuple(ctx.device_ids[i] for i in np.flatnonzero(mask))


@dataclass
class Particle:
    id: int
    position: np.ndarray
    velocity: np.ndarray
    personal_best_pos: np.ndarray
    personal_best_fit: float


@dataclass
class Swarm:
    particles: list[Particle]
    global_best_pos: np.ndarray
    global_best_fit: float
    hyper: PsoSpec
    seed: int
    iteration: int = 0
    trace: list[float] = field(default_factory=list)


def init_swarm(ctx: FitnessContext, hyper: PsoSpec, n_particles: int, seed: int) -> Swarm:
    particles = []
    for pid in range(n_particles):
        g = rng.stream(seed, "pso.init", pid)
        # particle p starts around inclusion rate (p+1)/(P+1) so that the initial
        # population spans small and large subsets
        rate = (pid + 1) / (n_particles + 1)
        x = g.uniform(0.0, 2.0, size=ctx.n) * np.where(g.random(ctx.n) < rate, 1.0, -1.0)
        v = g.uniform(-1.0, 1.0, size=ctx.n).clip(-hyper.v_max, hyper.v_max)
        fit = ctx.mask_fitness(decode_mask(x, ctx, hyper.threshold))
        particles.append(Particle(pid, x, v, x.copy(), fit))
    best = _best_particle(particles)
    return Swarm(particles, best.personal_best_pos.copy(), best.personal_best_fit, hyper, seed, 0, [best.personal_best_fit])


def _best_particle(particles: Sequence[Particle]) -> Particle:
    best = particles[0]
    for p in particles[1:]:
        if p.personal_best_fit < best.personal_best_fit:
            best = p
    return best


def _default_rand(seed: int) -> RandHook:
    def draw(pid: int, it: int, n: int):
        g = rng.stream(seed, "pso.step", pid, it)
        return g.random(n), g.random(n)

    return draw


def _advance(p: Particle, gbest: np.ndarray, hyper: PsoSpec, r1, r2, ctx: FitnessContext) -> Particle:
    v = hyper.omega * p.velocity + hyper.c1 * r1 * (p.personal_best_pos - p.position) + hyper.c2 * r2 * (gbest - p.position)
    v = np.clip(v, -hyper.v_max, hyper.v_max)
    x = p.position + v
    fit = ctx.mask_fitness(decode_mask(x, ctx, hyper.threshold))
    if fit < p.personal_best_fit:
        return Particle(p.id, x, v, x.copy(), fit)
    return Particle(p.id, x, v, p.personal_best_pos, p.personal_best_fit)


def pso_step(
    swarm: Swarm,
    ctx: FitnessContext,
    rand: Optional[RandHook] = None,
    executor: Optional[ThreadPoolExecutor] = None,
) -> Swarm:
    """One synchronous iteration; returns a new swarm."""
    draw = rand or _default_rand(swarm.seed)
    it = swarm.iteration
    gbest = swarm.global_best_pos

    def work(p: Particle) -> Particle:
        r1, r2 = draw(p.id, it, ctx.n)
        return _advance(p, gbest, swarm.hyper, r1, r2, ctx)

    if executor is None:
        moved = [work(p) for p in swarm.particles]
    else:
        moved = list(executor.map(work, swarm.particles))

    best = _best_particle(moved)
    if best.personal_best_fit < swarm.global_best_fit:
        g_pos, g_fit = best.personal_best_pos.copy(), best.personal_best_fit
    else:
        g_pos, g_fit = swarm.global_best_pos, swarm.global_best_fit
    return replace(swarm, particles=moved, global_best_pos=g_pos, global_best_fit=g_fit, iteration=it + 1, trace=swarm.trace + [g_fit])


@dataclass(frozen=True)
class SelectionResult:
    subset: tuple[int, ...]
    fitness: float
    trace: tuple[float, ...]  # index 0 = initial population, then one per iteration


def select_devices(
    ctx: FitnessContext,
    hyper: PsoSpec = PsoSpec(),
    n_particles: Optional[int] = None,
    n_iters: Optional[int] = None,
    seed: int = 0,
    threads: int = 1,
) -> SelectionResult:
    if not ctx.eligible.any():
        raise NoEligibleDevices("no eligible devices for selection")
    n_particles = hyper.n_particles if n_particles is None else n_particles
    n_iters = hyper.n_iters if n_iters is None else n_iters
    swarm = init_swarm(ctx, hyper, n_particles, seed)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            for _ in range(n_iters):
                swarm = pso_step(swarm, ctx, executor=ex)
    else:
        for _ in range(n_iters):
            swarm = pso_step(swarm, ctx)
    subset = decode(swarm.global_best_pos, ctx, hyper.threshold)
    return SelectionResult(subset, swarm.global_best_fit, tuple(swarm.trace))
