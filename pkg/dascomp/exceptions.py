"""Custom exceptions for dascomp."""

from typing import Any, List, Optional


def _rebuild(cls, args, state):
    err = cls.__new__(cls)
    err.args = args
    err.__dict__.update(state)
    return err


class DasCompError(Exception):
    """Base exception for all dascomp errors."""

    def __reduce__(self):
        # subclass __init__ signatures differ from args; rebuild from the saved state
        return (_rebuild, (type(self), self.args, self.__dict__))


class InvalidInstanceError(DasCompError):
    """Raised when a problem instance violates its invariants.

    ``violations`` is the full list of :class:`~dascomp.core.model.Violation`
    records, not just the first one found.
    """

    def __init__(self, violations: List[Any]):
        self.violations = list(violations)
        head = "; ".join(str(v) for v in self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"invalid problem instance: {head}{more}")


class DistanceTooSmallError(DasCompError):
    """Raised when the path-loss formula is evaluated below 1 meter."""

    def __init__(self, distance: float):
        self.distance = distance
        super().__init__(f"distance {distance!r} m is below the 1 m path-loss floor")


class NotConvergedError(DasCompError):
    """Raised when an iterative solver exhausts its iteration budget.

    The last state and the full trace stay reachable through ``result``.
    """

    def __init__(self, message: str, result: Optional[Any] = None):
        self.result = result
        super().__init__(message)


class ProtocolError(DasCompError):
    """Raised when the synchronous message-passing contract is broken."""

    pass


class ConfigError(DasCompError):
    """Raised when an experiment config cannot be parsed or validated."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
