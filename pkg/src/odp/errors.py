"""Exception types shared across the package.

CLI exit-code mapping: ConfigError -> 2, DivergenceError -> 3, OSError -> 4.
Everything else is a bug and propagates as exit code 1.
"""


class OdpError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(OdpError):
    """Invalid configuration: bad value, unknown key, infeasible request."""


class FormatError(OdpError):
    """Unsupported file format or bit depth."""


class DomainError(OdpError):
    """Tensor is in the wrong domain (spatial vs fourier) or wrong scalar field."""


class ShapeError(OdpError):
    """Shapes of operands are inconsistent."""


class InputError(OdpError):
    """Input violates an operation's precondition (e.g. measurements off-mask)."""


class UnsupportedAlgorithmError(OdpError):
    """Algorithm/model combination is undefined (e.g. gradient descent on CS-MRI)."""


class CompatibilityError(OdpError):
    """Checkpoint and configuration do not match."""


class DivergenceError(OdpError):
    """Training or search produced non-finite values."""
