"""Exception hierarchy shared across pipeline stages.

Each family carries the process exit code the CLI maps it to.
"""


class PipelineError(Exception):
    exit_code = 1


class ConfigError(PipelineError):
    """Invalid configuration, hyperparameters or model settings."""

    exit_code = 2


class ValidationError(PipelineError, ValueError):
    """A single input value violates its documented invariant."""

    exit_code = 3


class DataError(PipelineError):
    """Input data is missing, malformed, or cannot support the requested fit."""

    exit_code = 3


class DependencyError(DataError):
    """A stage was run before the stage that produces its inputs."""

    def __init__(self, message, producers=()):
        super().__init__(message)
        self.producers = tuple(producers)


class NumericFault(PipelineError, ArithmeticError):
    """Non-finite value produced during computation."""

    exit_code = 4


class IdentificationError(NumericFault):
    """Choice-model parameters are not identified by the data/spec."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)
