"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class GenfError(Exception):
    exit_code = 1


class ConfigError(GenfError, ValueError):
    """Invalid configuration, parameters or schema."""

    exit_code = 1


class DataError(GenfError, ValueError):
    """Input data cannot be used as given."""

    exit_code = 2


class ContractError(GenfError, ValueError):
    """Shape or argument contract violated by the caller."""

    exit_code = 1


class TrainingError(GenfError, RuntimeError):
    """Training diverged. ``trace`` holds whatever was recorded before failure."""

    exit_code = 3

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
