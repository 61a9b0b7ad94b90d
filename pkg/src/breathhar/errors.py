"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: configuration problems exit 2,
runtime stage failures exit 3, I/O failures exit 4.
"""


class BreathharError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(BreathharError):
    """A value violates a domain invariant or an operation precondition."""


class ConfigurationError(BreathharError):
    """A config file, flag, or derived setting fails validation."""


class InsufficientDataError(BreathharError):
    """The input is too short for the requested operation."""


class FormatError(BreathharError):
    """A file or wire payload does not match the expected format."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class TransportError(BreathharError):
    """A telemetry session failed; carries whatever summary was collected."""

    def __init__(self, message, summary=None):
        super().__init__(message)
        self.summary = summary


class UndefinedCorrelationError(ValidationError):
    """Pearson correlation is undefined (constant channel)."""

    def __init__(self, channel):
        super().__init__(f"correlation undefined: channel {channel!r} is constant")
        self.channel = channel


class StageError(BreathharError):
    """A pipeline stage failed; names the stage and the offending file."""

    def __init__(self, stage, message, path=None):
        detail = f"stage {stage!r} failed: {message}"
        if path is not None:
            detail = f"{detail} [{path}]"
        super().__init__(detail)
        self.stage = stage
        self.path = path
