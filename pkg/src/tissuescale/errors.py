"""Exception hierarchy shared by all modules."""


class TissueScaleError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 3


class ValidationError(TissueScaleError, ValueError):
    exit_code = 2


class GeometryError(ValidationError):
    pass


class ConfigError(ValidationError):
    """Configuration problem; ``line`` is set for syntax errors."""

    def __init__(self, message, line=None, field=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.field = field


class ConstraintError(TissueScaleError):
    pass


class CompatibilityError(TissueScaleError):
    def __init__(self, message, defect):
        super().__init__(message)
        self.defect = defect


class SolverError(TissueScaleError):
    """Linear or fixed-point solver failure carrying its iteration trace."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class MismatchError(TissueScaleError):
    pass


class MonitorTrip(TissueScaleError):
    exit_code = 4
