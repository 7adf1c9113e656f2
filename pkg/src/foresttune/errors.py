"""Exception types mapped to CLI exit codes."""


class ForestTuneError(Exception):
    """Base class for all foresttune errors."""


class ConfigError(ForestTuneError):
    """Invalid run configuration (CLI exit code 2)."""


class DataError(ForestTuneError):
    """Unusable input data (CLI exit code 3)."""


class EvaluationError(ForestTuneError):
    """A parameter evaluation or optimisation run failed (CLI exit code 4)."""
