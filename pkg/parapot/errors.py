class ParapotError(Exception):
    """Base class of every error raised by parapot."""


class DimensionMismatchError(ParapotError, ValueError):
    pass


class SignedMeasureError(ParapotError, ValueError):
    pass


class SingularEvaluationError(ParapotError, ValueError):
    """A kernel was evaluated at its singularity."""


class ParameterRangeError(ParapotError, ValueError):
    pass


class StabilityError(ParapotError, ValueError):
    """Explicit time stepping requested outside its stability bound."""


class MeasureFileError(ParapotError, ValueError):
    def __init__(self, message: str, path: str = "<memory>", line: int | None = None):
        self.path = path
        self.line = line
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {message}")


class SolverError(ParapotError, RuntimeError):
    def __init__(self, message: str, residual: float | None = None):
        self.residual = residual
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")


class DivergenceError(ParapotError, RuntimeError):
    def __init__(self, message: str, iterate: int | None = None):
        self.iterate = iterate
        super().__init__(message if iterate is None else f"{message} (iterate {iterate})")
