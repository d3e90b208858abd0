"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class AedaError(Exception):
    exit_code = 1


class ConfigError(AedaError, ValueError):
    """Invalid or unknown configuration values."""

    exit_code = 2


class SchemaError(AedaError, ValueError):
    """A file does not follow its declared format."""

    exit_code = 4


class DimensionMismatchError(AedaError, ValueError):
    exit_code = 5


class TrainingDivergedError(AedaError, ArithmeticError):
    """Loss or parameters became non-finite during training."""

    exit_code = 6


class ConvergenceError(AedaError, ArithmeticError):
    """An iterative solver hit its iteration cap before converging."""

    exit_code = 7


class MissingLabelsError(AedaError, ValueError):
    """Speaker or channel labels are required but absent."""

    exit_code = 8
