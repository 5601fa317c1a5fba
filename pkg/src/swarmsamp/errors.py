"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument broke a documented precondition."""


class MapFormatError(ValueError):
    """A map file could not be parsed; the message names the offending line or byte."""


class CheckpointError(ValueError):
    """A policy checkpoint is malformed or inconsistent with the configuration."""


class NonFiniteGradient(RuntimeError):
    """A gradient contained NaN or infinity; the epoch must be aborted."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite update; carries the last good parameters."""

    def __init__(self, message, last_good_params=None):
        super().__init__(message)
        self.last_good_params = last_good_params


class MetricUndefined(ValueError):
    """A metric was requested for a log that cannot support it (e.g. overlap with one robot)."""
