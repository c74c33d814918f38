"""Exception hierarchy shared by all artgan modules.

Two top-level families map onto the CLI exit codes: ValidationError -> 1,
RuntimeFailure -> 2.
"""


class ArtganError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ArtganError):
    """Bad input: malformed files, out-of-range values, contract misuse."""


class ShapeError(ValidationError):
    """Tensor dimensions incompatible with the requested operation."""


class ContractError(ValidationError):
    """An operation was called outside its documented contract."""


class ConfigError(ValidationError):
    """Invalid configuration value or unknown configuration key."""


class FormatError(ValidationError):
    """A binary or text artifact does not match its declared format."""


class CorruptionError(FormatError):
    """A file parsed structurally but failed its integrity check."""


class EmptyDatasetError(ValidationError):
    """No usable images were found where at least one is required."""


class InsufficientDataError(ValidationError):
    """Too few rows/samples to compute the requested statistic."""


class RuntimeFailure(ArtganError):
    """Errors arising during computation rather than from bad input."""


class NumericError(RuntimeFailure):
    """Non-finite intermediate values or a failed numeric routine."""


class DivergedTrainingError(NumericError):
    """Training produced a non-finite loss.

    Carries the last finite training state so callers can recover it.
    """

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class CheckpointWriteError(RuntimeFailure):
    """Checkpoint could not be written; prior checkpoint is untouched."""
