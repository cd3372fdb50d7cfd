"""Exception hierarchy; the CLI maps each family to an exit code."""


class FppError(Exception):
    """Base for every error raised by the toolkit"""

    exit_code = 1


class ConfigError(FppError, ValueError):
    """Invalid medium spec, parameter or precondition"""


class WrongKindError(ConfigError):
    """Operation requires a different medium kind"""


class BoxTooSmallError(ConfigError):
    """Box cannot contain the requested reachable set"""


class DegenerateError(ConfigError):
    """Input makes the requested quantity undefined"""


class MismatchError(ConfigError):
    """Atomic space and environment disagree"""


class CapacityError(FppError, MemoryError):
    """Box exceeds the configured site budget"""


class NumericalError(FppError, RuntimeError):
    """Solver failed to converge or broke an internal invariant"""

    exit_code = 2


class NonConvergenceError(NumericalError):
    """Iteration cap reached or descent guarantee violated"""
