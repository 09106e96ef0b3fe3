"""Swarm-optimized federated learning simulator.

PSO picks which edge devices train each round, ACO picks how their updates
reach the cloud, and a FedAvg engine with an energy/time ledger ties the two
together on a synthetic non-IID classification task.
"""

__version__ = "0.1.0"

from .config import RunConfig, load_config, parse_config  # noqa: E402
from .errors import SwarmFLError  # noqa: E402
from .flengine import run_simulation  # noqa: E402

__all__ = ["RunConfig", "SwarmFLError", "load_config", "parse_config", "run_simulation", "__version__"]
