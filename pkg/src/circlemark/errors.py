"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid argument or configuration value."""


class SolverError(RuntimeError):
    """Transport solver failed to converge; carries the final residual norms."""

    def __init__(self, message, row_residual=None, col_residual=None):
        super().__init__(message)
        self.row_residual = row_residual
        self.col_residual = col_residual


class TieError(RuntimeError):
    """Two tokens are equidistant from a channel angle in the exact two-point mode."""


class StreamError(RuntimeError):
    """A distribution source was exhausted before the requested number of steps."""


class CapabilityError(RuntimeError):
    """Requested operation exceeds a hard implementation cap (e.g. exhaustive decoding size)."""


class DecodeFailureError(RuntimeError):
    """Every candidate message scored +inf; no decodable message exists."""


class ProtocolError(RuntimeError):
    """Malformed or out-of-order message on the stdio bridge protocol."""
