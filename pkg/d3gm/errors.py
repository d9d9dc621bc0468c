class D3gmError(Exception):
    """Base class for every error raised by d3gm."""


class ValidationError(D3gmError, ValueError):
    pass


class DomainError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class AlignmentError(ValidationError):
    pass


class HorizonError(ValidationError):
    pass


class NumericError(D3gmError, ArithmeticError):
    pass


class SingularScheduleError(NumericError):
    pass


class SimulationError(NumericError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class TrainingError(NumericError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
