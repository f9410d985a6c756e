"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class DenoiseError(Exception):
    exit_code = 1


class MediaIOError(DenoiseError, IOError):
    """Unreadable, malformed or unwritable media."""

    exit_code = 3


class EncoderUnavailableError(DenoiseError, EnvironmentError):
    """The external encoder binary could not be found on this host."""

    exit_code = 4


class CodecError(DenoiseError):
    """The external encoder ran but failed or produced inconsistent output."""

    exit_code = 3


class InvariantError(DenoiseError, ValueError):
    """Input data violates a documented invariant (NaN, shape, range)."""

    exit_code = 5


class ShapeError(InvariantError):
    pass
