"""Exception hierarchy shared across the package."""


class DualMindError(Exception):
    """Base class for all package errors."""


class ConfigError(DualMindError, ValueError):
    """Invalid configuration value, unknown name, or mismatched checkpoint."""


class InputError(DualMindError, ValueError):
    """Caller passed a malformed or non-finite input."""


class NumericError(DualMindError, FloatingPointError):
    """A computation produced NaN or Inf."""


class NotReadyError(DualMindError):
    """Retryable: the replay buffer does not yet hold enough data."""

    retryable = True


class FormatError(DualMindError):
    """Base for on-disk format problems."""


class VersionError(FormatError):
    def __init__(self, found: int, supported: int, what: str = "file"):
        self.found = found
        self.supported = supported
        super().__init__(
            f"{what} format version {found} is not supported "
            f"(this build reads version {supported})"
        )


class TruncatedFileError(FormatError):
    """File ended before a length-prefixed block was complete."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""
