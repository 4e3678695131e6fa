"""Shared exception types; the CLI maps these onto exit codes."""


class ConfigError(ValueError):
    """Invalid configuration value or inconsistent setup (exit code 2)."""


class DataError(ValueError):
    """Missing or malformed input data (exit code 3)."""


class ShapeError(ValueError):
    """Tensor/layer dimension mismatch."""


class SubsampleSizeError(DataError):
    """Requested subsample larger than the source corpus."""


class OptimizerStateError(RuntimeError):
    """Optimizer stepped before its slots were initialized."""


class UndefinedDistanceError(ValueError):
    """WMD undefined: no sentence token has an embedding."""


class TunerError(RuntimeError):
    """Hyperparameter search could not produce a single successful trial."""
