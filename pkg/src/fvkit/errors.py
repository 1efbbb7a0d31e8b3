"""Exception hierarchy.

Every exception carries a short ``category`` string that the command line
front end prints on stderr and maps to an exit code.
"""


class FvkError(Exception):
    category = "error"


class FormatError(FvkError, ValueError):
    """Malformed header, wrong magic bytes, unknown version or type tag."""

    category = "format"


class DataError(FvkError, ValueError):
    """Payload values that violate a type invariant (NaN/Inf, bad weights)."""

    category = "data"


class TruncatedFileError(FvkError, OSError):
    category = "io"


class CorruptPayloadError(FvkError, ValueError):
    category = "corrupt"


class DimensionError(FvkError, ValueError):
    category = "dimension"


class ConvergenceError(FvkError, ArithmeticError):
    """Iterative solver stopped at ``max_iter`` without meeting its tolerance.

    ``last`` holds the final iterate and ``residual`` its optimality residual.
    ``row`` is set by batched solvers to the index of the failing row.
    """

    category = "convergence"

    def __init__(self, message, last=None, residual=None, row=None):
        super().__init__(message)
        self.last = last
        self.residual = residual
        self.row = row


class NumericalError(FvkError, ArithmeticError):
    category = "numerical"
