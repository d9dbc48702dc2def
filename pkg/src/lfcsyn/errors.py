"""Exception types shared across the package."""


class LfcError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(LfcError):
    """A physical or configuration parameter is outside its valid domain."""


class DimensionError(LfcError):
    """Matrix or vector dimensions are inconsistent."""


class CertificateError(LfcError):
    """A solution fails a positive-definiteness or certificate check."""


class SolveError(LfcError):
    """The SDP solver did not return a usable solution."""

    def __init__(self, message, status=None, diagnostics=None):
        super().__init__(message)
        self.status = status
        self.diagnostics = diagnostics or {}
