"""Exception types shared across the package.

Most failures are argument or file-format problems and subclass ValueError /
RuntimeError so callers that don't care about the fine distinction can catch
the built-in. Numerical failures (ill-conditioning, non-convergence) carry
enough state to report what went wrong without re-running.
"""

from __future__ import annotations


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class DimensionMismatchError(ValueError):
    """Array or file dimensions do not match the expected grid."""


class FormatError(RuntimeError):
    """A file does not conform to its declared format."""


class BadMagicError(FormatError):
    """Exchange file does not start with the expected magic string."""


class SizeMismatchError(FormatError):
    """Exchange file payload size disagrees with its header."""


class UnsupportedDtypeError(FormatError):
    """Exchange file declares a dtype this implementation does not handle."""


class SingularModelError(RuntimeError):
    """A model is exactly degenerate (e.g. zero-information parameter)."""


class IllConditionedError(RuntimeError):
    """A Fisher matrix is too ill-conditioned to invert reliably.

    Carries the full eigenvalue spectrum so the caller can report which
    directions collapsed instead of silently pseudo-inverting.
    """

    def __init__(self, message: str, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class NonConvergenceError(RuntimeError):
    """An iterative fit exhausted its budget without meeting tolerance.

    ``best`` holds the best partial result seen so the caller can inspect
    or log it; it is never silently promoted to a converged result.
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class InitFailedError(RuntimeError):
    """A data-driven initializer found no usable structure in the frame."""


class UsageError(ValueError):
    """Command-line usage or run-configuration error (exit code 2)."""
