"""Exception hierarchy shared by the library and the command-line harness."""


class GmmWienerError(Exception):
    """Base class; ``exit_code`` is what the CLI returns when this escapes."""

    exit_code = 2


class DataError(GmmWienerError, ValueError):
    """Input data is unreadable, malformed or incompatible."""

    exit_code = 2


class UnsupportedFormatError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class ModelVersionError(DataError):
    pass


class InvariantViolation(GmmWienerError, ValueError):
    """A value broke one of its declared invariants."""

    exit_code = 3
