"""Exception hierarchy shared by all simulator modules."""

from __future__ import annotations


class SwarmFLError(Exception):
    """Base class for every error raised by the package."""


class InfeasibleTopology(SwarmFLError):
    pass


class PartitionInfeasible(SwarmFLError):
    pass


class UnknownDevice(SwarmFLError, KeyError):
    pass


class DimensionMismatch(SwarmFLError, ValueError):
    pass


class EmptyTestSet(SwarmFLError, ValueError):
    pass


class IneligibleDevice(SwarmFLError, ValueError):
    pass


class NoEligibleDevices(SwarmFLError):
    """No device can afford a round. Carries the history recorded so far."""

    def __init__(self, message: str = "no eligible devices", history: list | None = None):
        super().__init__(message)
        self.history = list(history or [])


class NoRouteFound(SwarmFLError):
    pass


class EmptyUpdateSet(SwarmFLError, ValueError):
    pass


class TooManyDevices(SwarmFLError, ValueError):
    pass


class NotEnoughEligible(SwarmFLError, ValueError):
    pass


class MissingRuns(SwarmFLError):
    pass


class LedgerViolation(SwarmFLError, AssertionError):
    """Energy ledger or battery invariant broken; always fatal."""


class ConfigError(SwarmFLError, ValueError):
    """Run-config validation failure.

    ``issues`` is a list of ``{"loc": "a.b.c", "msg": ...}`` dicts so callers can
    print structured diagnostics.
    """

    def __init__(self, issues: list[dict], source: str | None = None):
        self.issues = issues
        self.source = source
        lines = [f"{i['loc']}: {i['msg']}" for i in issues]
        prefix = f"{source}: " if source else ""
        super().__init__(prefix + "; ".join(lines))
