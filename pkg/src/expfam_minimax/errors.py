"""Exception hierarchy.

Every error carries a short machine-readable ``code`` (used by the CLI's
``ERROR <code> <message>`` line) and the process exit status it maps to.
"""


class MinimaxError(Exception):
    code = "E_INTERNAL"
    exit_status = 1


class ConfigError(MinimaxError):
    code = "E_CONFIG"
    exit_status = 2


class DimensionMismatch(MinimaxError, ValueError):
    code = "E_DIMENSION"
    exit_status = 2


class ParameterOutOfBox(MinimaxError, ValueError):
    code = "E_BOX"
    exit_status = 2


class LambdaOutOfRange(MinimaxError, ValueError):
    code = "E_LAMBDA"
    exit_status = 2


class NonsingularityViolated(MinimaxError, ValueError):
    code = "E_SINGULAR"
    exit_status = 2


class LatticeSizeError(MinimaxError, ValueError):
    code = "E_LATTICE"
    exit_status = 2


class EmptyIntersection(MinimaxError):
    code = "E_EMPTY"
    exit_status = 1


class NotMonotone(MinimaxError):
    code = "E_NOT_MONOTONE"
    exit_status = 1


class InvariantViolation(MinimaxError):
    code = "E_INVARIANT"
    exit_status = 1

    def __init__(self, message, clause=None, witnesses=None):
        super().__init__(message)
        self.clause = clause
        self.witnesses = list(witnesses or [])


class DepthExceeded(MinimaxError):
    code = "E_DEPTH"
    exit_status = 1


class NodeCapExceeded(MinimaxError):
    code = "E_RESOURCE"
    exit_status = 3


class InsufficientRows(MinimaxError, ValueError):
    code = "E_ROWS"
    exit_status = 1


class ExperimentFailed(MinimaxError):
    code = "E_EXPERIMENT"
    exit_status = 1
