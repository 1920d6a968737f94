"""Exception types raised across the package."""


class TailQuantError(Exception):
    """Base class for all package errors."""


class ShapeError(TailQuantError, ValueError):
    pass


class ParameterError(TailQuantError, ValueError):
    pass


class NonFiniteError(TailQuantError, ValueError):
    pass


class DegenerateInputError(TailQuantError, ValueError):
    """Raised when a tensor carries no information to calibrate on (e.g. all zeros)."""


class SingularSystemError(TailQuantError, ArithmeticError):
    pass


class BundleError(TailQuantError):
    """Malformed or inconsistent tensor bundle on disk."""


class ChecksumError(BundleError):
    pass


class VerificationError(TailQuantError):
    pass
