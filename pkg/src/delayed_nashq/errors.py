"""Exception types shared across the package."""


class NashQError(Exception):
    """Base class for all package errors."""


class NoEquilibriumFound(NashQError):
    """Support enumeration returned no equilibrium for a stage game."""


class TerminalState(NashQError):
    """A transition was requested from a terminal state."""


class NonConvergence(NashQError):
    """An iterative evaluation did not reach its tolerance.

    The last residual is kept on the exception so callers can report it.
    """

    def __init__(self, message: str, residual: float, result=None):
        super().__init__(message)
        self.residual = residual
        self.result = result


class InvalidSpec(NashQError):
    """A grid-world layout or game file is malformed."""


class BoundViolation(NashQError):
    """A hard event-count bound was exceeded.

    The bounds are theorems, so this always indicates an implementation bug.
    """

    def __init__(self, bound: str, count: int, limit: float):
        super().__init__(f"{bound}: count {count} exceeds bound {limit:.6g}")
        self.bound = bound
        self.count = count
        self.limit = limit


class ConfigError(NashQError):
    """Experiment configuration is invalid."""


class OracleNotConverged(NashQError):
    """The Nash oracle did not converge, so convergence cannot be certified."""
