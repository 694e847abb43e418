"""Error types shared by the library and the CLI (each carries its exit code)."""


class OdfError(Exception):
    """Base class for every failure the CLI reports instead of a traceback."""

    exit_code = 1


class ConfigError(OdfError, ValueError):
    """Invalid configuration value, unknown config key or bad flag."""

    exit_code = 2


class DataError(OdfError, ValueError):
    """Unreadable or inconsistent input data (meshes, datasets, images)."""

    exit_code = 3


class NumericalError(OdfError, ArithmeticError):
    """NaN/inf during training or inference."""

    exit_code = 4
