"""Exception types shared across the package."""


class PainseqError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PainseqError):
    """Tensor shapes are inconsistent with the operation's contract."""


class ConfigError(PainseqError):
    """Invalid configuration value or unparseable config file."""


class FormatError(PainseqError):
    """Corrupt or unsupported binary/CSV file content."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(PainseqError):
    """Invalid dataset content: labels, splits, missing payloads."""


class TrainingError(PainseqError):
    """Training aborted (non-finite loss/gradient, empty class, ...)."""
