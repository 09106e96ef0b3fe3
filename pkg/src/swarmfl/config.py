"""Run-configuration schema.

A run config is a single JSON document. Every section has documented defaults,
unknown keys are rejected, and ``materialize`` produces the fully expanded form
that is hashed into the run manifest.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path
from typing import Literal, Optional, Tuple, get_args

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

SCHEMA_VERSION = 1

StrategyId = Literal[
    "pso_aco",
    "random_fixed",
    "rule_based",
    "exhaustive_oracle",
    "dijkstra_routing",
    # ablation arms
    "random_aco",
    "pso_static",
    "edge_only",
    # every eligible device, exact routing; used for controlled comparisons
    "full_participation",
]

STRATEGY_IDS: tuple[str, ...] = get_args(StrategyId)

Range = Tuple[float, float]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _check_range(v: Range, *, strictly_positive: bool = True) -> Range:
    lo, hi = v
    if lo > hi:
        raise ValueError(f"range lower bound {lo} exceeds upper bound {hi}")
    if strictly_positive and lo <= 0:
        raise ValueError("range must lie in (0, inf)")
    if not strictly_positive and lo < 0:
        raise ValueError("range must be non-negative")
    return v


class TopologySpec(_Section):
    n_devices: int = Field(100, ge=1, le=10000)
    # None -> n_devices // 10
    n_relays: Optional[int] = Field(None, ge=0)
    area_m: float = Field(1000.0, gt=0)
    bw_range: Range = (10.0, 100.0)
    latency_range_ms: Range = (1.0, 20.0)
    connection_radius_m: float = Field(300.0, gt=0)
    # repair links allowed to restore connectivity; None -> n_devices
    max_repair_links: Optional[int] = Field(None, ge=0)

    @field_validator("bw_range")
    @classmethod
    def _bw(cls, v):
        return _check_range(v)

    @field_validator("latency_range_ms")
    @classmethod
    def _lat(cls, v):
        return _check_range(v, strictly_positive=False)

    @property
    def relays(self) -> int:
        return self.n_devices // 10 if self.n_relays is None else self.n_relays


class FleetSpec(_Section):
    compute_range: Range = (1e7, 1e8)
    battery_range_j: Range = (200.0, 1000.0)
    energy_per_step_range_j: Range = (0.02, 0.1)
    tx_power_w: float = Field(2.0, gt=0)
    idle_power_w: float = Field(0.5, ge=0)

    @field_validator("compute_range", "energy_per_step_range_j")
    @classmethod
    def _pos(cls, v):
        return _check_range(v)

    @field_validator("battery_range_j")
    @classmethod
    def _nonneg(cls, v):
        return _check_range(v, strictly_positive=False)


class DataSpec(_Section):
    n_samples: int = Field(4000, ge=2)
    n_test: int = Field(2000, ge=1)
    n_features: int = Field(8, ge=1)
    num_classes: int = Field(10, ge=2)
    class_sep: float = Field(2.5, ge=0)
    dirichlet_alpha: float = Field(0.3, gt=0)
    coverage: float = Field(1.0, gt=0, le=1.0)

    @model_validator(mode="after")
    def _enough(self):
        if self.n_samples < self.num_classes:
            raise ValueError("n_samples must be >= num_classes")
        return self


class TrainingSpec(_Section):
    steps: int = Field(20, ge=0)
    lr: float = Field(0.5, gt=0)
    cost_per_step: float = Field(1e6, gt=0)
    model_size_mb: float = Field(10.0, ge=0)


class PsoSpec(_Section):
    n_particles: int = Field(60, ge=1)
    n_iters: int = Field(200, ge=0)
    omega: float = 0.7
    c1: float = Field(1.49, ge=0)
    c2: float = Field(1.49, ge=0)
    v_max: float = Field(4.0, gt=0)
    threshold: float = Field(0.5, gt=0, lt=1)


class FitnessWeights(_Section):
    alpha_e: float = Field(1.0, ge=0)
    beta_r: float = Field(1.0, ge=0)
    gamma_d: float = Field(1.0, ge=0)

    @model_validator(mode="after")
    def _some_positive(self):
        if max(self.alpha_e, self.beta_r, self.gamma_d) <= 0:
            raise ValueError("at least one fitness weight must be > 0")
        return self


class AcoSpec(_Section):
    alpha_pher: float = Field(0.5, ge=0)
    beta_heur: float = Field(2.0, ge=0)
    rho: float = Field(0.5, ge=0, le=1)
    q_deposit: float = Field(1.0, gt=0)
    n_ants: int = Field(20, ge=1)
    n_iters: int = Field(50, ge=1)
    tau_init: float = Field(1.0, gt=0)
    tau_min: float = Field(1e-3, gt=0)
    mode: Literal["latency", "bandwidth"] = "bandwidth"
    persist_pheromone: bool = False

    @model_validator(mode="after")
    def _tau(self):
        if self.tau_init < self.tau_min:
            raise ValueError("tau_init must be >= tau_min")
        return self


class ObjectiveWeights(_Section):
    alpha_energy: float = Field(1.0, ge=0)
    gamma_time: float = Field(1.0, ge=0)
    beta_loss: float = Field(1.0, ge=0)

    @model_validator(mode="after")
    def _some_positive(self):
        if max(self.alpha_energy, self.gamma_time, self.beta_loss) <= 0:
            raise ValueError("at least one objective weight must be > 0")
        return self


class BaselineSpec(_Section):
    # None -> mean PSO selection size of the same experiment (or 10% of the fleet)
    random_k: Optional[int] = Field(None, ge=1)
    min_battery_frac: float = Field(0.1, ge=0)
    min_samples: int = Field(1, ge=0)


class RunConfig(_Section):
    schema_version: Literal[1] = SCHEMA_VERSION
    topology: TopologySpec = TopologySpec()
    fleet: FleetSpec = FleetSpec()
    data: DataSpec = DataSpec()
    training: TrainingSpec = TrainingSpec()
    pso: PsoSpec = PsoSpec()
    fitness: FitnessWeights = FitnessWeights()
    aco: AcoSpec = AcoSpec()
    objective: ObjectiveWeights = ObjectiveWeights()
    baselines: BaselineSpec = BaselineSpec()
    strategy: StrategyId = "pso_aco"
    n_rounds: int = Field(20, ge=0)
    seeds: list[int] = [0]

    @model_validator(mode="after")
    def _cross(self):
        if self.data.n_samples < self.topology.n_devices:
            raise ValueError("data.n_samples must be >= topology.n_devices (every device needs a sample)")
        return self


def materialize(cfg: RunConfig) -> dict:
    """Plain-JSON form with every default filled in."""
    return cfg.model_dump(mode="json")


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(materialize(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _line_of(text: str, loc: tuple) -> Optional[int]:
    keys = [k for k in loc if isinstance(k, str)]
    if not keys:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(keys[-1]), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def parse_config(text: str, source: Optional[str] = None) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([{"loc": "<document>", "msg": exc.msg, "line": exc.lineno}], source) from exc
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        issues = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            issue = {"loc": ".".join(str(p) for p in loc) or "<root>", "msg": err["msg"]}
            line = _line_of(text, loc)
            if line is not None:
                issue["line"] = line
            issues.append(issue)
        raise ConfigError(issues, source) from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(materialize(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")
