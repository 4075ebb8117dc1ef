"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: data problems (parse/validation/
insufficient data) exit 1, usage errors exit 2, numerical failures exit 3.
"""


class LossFdaError(Exception):
    """Base class for all package errors."""


class ParseError(LossFdaError):
    """Malformed input row; carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(LossFdaError):
    """Input violates a structural invariant (shape, sign, contiguity)."""


class InsufficientDataError(LossFdaError):
    """Operation needs more observations than were supplied."""


class SingularityError(LossFdaError):
    """A linear system is singular; usually fixable with a positive penalty."""


class DegenerateResampleError(LossFdaError):
    """Bootstrap resampling produced an unusable replicate after retries."""


class ConvergenceWarning(UserWarning):
    """An iterative solver hit its iteration cap before converging."""
