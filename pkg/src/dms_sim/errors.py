"""Exception hierarchy shared by every layer of the simulator.

Each class carries the CLI exit code it maps to, so the command line can
turn any failure into the documented status without a lookup table.
"""

from __future__ import annotations


class DmsError(Exception):
    exit_code = 1


# -- configuration --------------------------------------------------------

class ConfigError(DmsError):
    exit_code = 2


class ParseError(ConfigError):
    def __init__(self, line: int, reason: str, path: str | None = None):
        self.line = line
        self.reason = reason
        self.path = path
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {reason}")


class ValidationError(ConfigError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class UnknownBlock(ConfigError):
    pass


class UnknownResource(ConfigError):
    pass


# -- activity model -------------------------------------------------------

class UnknownNode(ConfigError):
    pass


class Infeasible(ConfigError):
    pass


class NotEnoughHosts(ConfigError):
    pass


class InvalidPartition(ConfigError):
    pass


# -- run time -------------------------------------------------------------

class SimulationError(DmsError):
    exit_code = 3


class PastEvent(SimulationError):
    """An event was scheduled or popped behind the kernel clock."""


class CausalityViolation(SimulationError):
    """A message arrived with a timestamp below its channel clock."""


class UnknownLabel(SimulationError):
    pass


class UnknownLink(SimulationError):
    pass


class Deadlock(SimulationError):
    def __init__(self, message: str, snapshot: dict | None = None):
        self.snapshot = dict(snapshot or {})
        super().__init__(message)


# -- transport ------------------------------------------------------------

class TransportError(DmsError):
    exit_code = 4


class MalformedFrame(TransportError):
    pass


class AlreadyBound(TransportError):
    pass


class Unreachable(TransportError):
    pass


class Closed(TransportError):
    pass


class PeerLost(TransportError):
    pass


class SequenceError(TransportError):
    """Per-link sequence audit failed (reordering or duplicate delivery)."""
