"""Exception hierarchy shared across the package."""


class MultiResError(Exception):
    """Base class for all package errors."""


class InvalidResolutionError(MultiResError, ValueError):
    pass


class GridMismatchError(MultiResError, ValueError):
    pass


class UndefinedMetricError(MultiResError, ValueError):
    pass


class NumericalError(MultiResError, ArithmeticError):
    """Anything that should map to the numerical-failure exit code."""


class SamplingError(NumericalError):
    pass


class SolverError(NumericalError):
    pass


class SolverInstabilityError(SolverError):
    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class ModeTruncationError(MultiResError, ValueError):
    pass


class TrainingError(NumericalError):
    def __init__(self, message, step=None, member=None):
        super().__init__(message)
        self.step = step
        self.member = member


class InsufficientEnsembleError(MultiResError, ValueError):
    pass


class CampaignExhaustedError(MultiResError, RuntimeError):
    pass


class ConfigError(MultiResError, ValueError):
    pass
