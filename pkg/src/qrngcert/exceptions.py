"""Exception hierarchy shared by every module."""


class QrngCertError(Exception):
    """Base class for all errors raised by qrngcert."""


class InvalidArgumentError(QrngCertError, ValueError):
    pass


class PreconditionError(QrngCertError, ValueError):
    """An input violates an operation's precondition.

    ``measured`` carries the offending quantity (e.g. a unitarity deviation)
    when there is one.
    """

    def __init__(self, message, measured=None):
        super().__init__(message)
        self.measured = measured


class ConfigError(QrngCertError):
    pass


class DataError(QrngCertError, ValueError):
    pass


class CalibrationRefused(QrngCertError):
    """Raised when a correction is requested from an unconverged fit."""
