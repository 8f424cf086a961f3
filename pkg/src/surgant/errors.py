"""Exception types shared across the package."""


class SurgAntError(Exception):
    """Base class for every error raised by surgant."""


class ShapeError(SurgAntError, ValueError):
    pass


class NumericError(SurgAntError, ArithmeticError):
    pass


class ConfigError(SurgAntError, ValueError):
    pass


class GraphError(SurgAntError, RuntimeError):
    pass


class EmptyInputError(SurgAntError, ValueError):
    pass


class LengthError(SurgAntError, ValueError):
    pass


class InputError(SurgAntError, ValueError):
    pass


class UndefinedMetricError(SurgAntError, ValueError):
    pass


class CheckpointError(SurgAntError, ValueError):
    pass


class TrainingDiverged(SurgAntError, RuntimeError):
    def __init__(self, message, batch_ids=None):
        super().__init__(message)
        self.batch_ids = list(batch_ids or [])
