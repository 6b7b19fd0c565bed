"""Exception types shared across the package."""


class SmoothCertError(Exception):
    """Base class for all package errors."""


class DomainError(SmoothCertError, ValueError):
    """An argument lies outside the domain of the operation."""


class DimMismatch(SmoothCertError, ValueError):
    """Array shapes are inconsistent with each other."""


class NonConvergence(SmoothCertError, RuntimeError):
    pass


class NonFinite(SmoothCertError, FloatingPointError):
    """An objective or iterate became NaN or infinite."""


class FormatError(SmoothCertError, ValueError):
    """A file does not follow the expected binary or text layout."""


class MismatchError(SmoothCertError, ValueError):
    pass


class ConfigError(SmoothCertError, ValueError):
    pass


class GridMismatch(SmoothCertError, ValueError):
    pass


class DimError(SmoothCertError, ValueError):
    pass


class EigenvalueDegeneracy(UserWarning):
    """Smallest eigenvalue is repeated; a subgradient is used instead."""
