"""Exception types raised by the numerical routines."""


class DomainError(ValueError):
    """An input lies outside the domain of the requested loss or kernel."""


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap before meeting its tolerance."""


class SolverError(RuntimeError):
    """A solver produced a non-finite objective and had to abort."""


class ConfigError(ValueError):
    """Invalid run configuration."""


class DataFormatError(ValueError):
    """Malformed input file; the message carries the offending line."""
