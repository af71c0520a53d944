"""Exception hierarchy shared across the package."""


class JointBCIError(Exception):
    """Base class for all package errors."""


class ParameterError(JointBCIError, ValueError):
    """An argument violates a documented precondition."""


class InputError(JointBCIError, ValueError):
    """Malformed numeric input (shape mismatch, non-finite values)."""


class DegenerateInputError(JointBCIError, ValueError):
    """Input is valid in shape but numerically degenerate (zero signal, zero spread)."""


class DegenerateClassError(DegenerateInputError):
    """A class has no usable (positively weighted) samples."""


class RankError(JointBCIError, ValueError):
    """Composite covariance has too few retained dimensions."""


class FormatError(JointBCIError, ValueError):
    """A file does not match its container format.

    ``offset`` is the byte offset at which the problem was detected, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SequencingError(JointBCIError, RuntimeError):
    """An operation was called out of order in the trial protocol."""


class ConfigError(JointBCIError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ExperimentError(JointBCIError, RuntimeError):
    """Decoder training failed mid-experiment."""

    def __init__(self, session, cause):
        super().__init__(f"session {session}: {cause}")
        self.session = session
        self.cause = cause
