"""Exceptions raised by the catching pipeline."""


class CatchingError(Exception):
    """Base class for all errors raised by this package"""


class DimensionError(CatchingError, ValueError):
    pass


class SingularConfigurationError(CatchingError):
    def __init__(self, message: str, condition_number: float = float("inf")):
        super().__init__(f"{message} (condition number {condition_number:.3e})")
        self.condition_number = condition_number
        self._message = message

    def __reduce__(self):
        return type(self), (self._message, self.condition_number)


class EstimationError(CatchingError):
    pass


class SolverError(CatchingError):
    def __init__(self, message: str, status: str):
        super().__init__(message)
        self.status = status

    def __reduce__(self):
        return type(self), (self.args[0], self.status)


class IndefiniteHessianError(CatchingError):
    def __init__(self, message: str, min_eigenvalue: float):
        super().__init__(f"{message} (min eigenvalue {min_eigenvalue:.3e})")
        self.min_eigenvalue = min_eigenvalue
        self._message = message

    def __reduce__(self):
        return type(self), (self._message, self.min_eigenvalue)


class StiffnessModelError(CatchingError, ValueError):
    pass


class TrainingError(CatchingError):
    pass


class ConfigError(CatchingError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self._message = message

    def __reduce__(self):
        return type(self), (self.field, self._message)


class SimulationError(CatchingError):
    """Numerical blow-up or an impossible simulation setup"""
