"""Exception hierarchy. The CLI maps each family to an exit code."""


class SparkleError(Exception):
    pass


class ConfigError(SparkleError, ValueError):
    """Invalid experiment configuration (exit code 1)."""


class NumericalError(SparkleError, ArithmeticError):
    """A solver or factorization could not produce a trustworthy answer (exit code 2)."""


class CalibrationError(NumericalError):
    def __init__(self, message, deficient_directions=None):
        super().__init__(message)
        self.deficient_directions = deficient_directions


class RankDeficientError(NumericalError):
    def __init__(self, message, nullity=0):
        super().__init__(message)
        self.nullity = nullity


class SolverError(NumericalError):
    def __init__(self, message, best_iterate=None, kkt_residual=None):
        super().__init__(message)
        self.best_iterate = best_iterate
        self.kkt_residual = kkt_residual


class MaskMismatchError(SparkleError, ValueError):
    pass


class FormatError(SparkleError, OSError):
    """Malformed file on disk (exit code 3)."""
