"""Exception hierarchy shared by every module of the package."""


class RobustFrontError(Exception):
    """Base class for all package errors."""


class DegenerateInputError(RobustFrontError, ValueError):
    """An input cannot define the requested object (e.g. a zero quaternion)."""


class DegenerateConfigurationError(RobustFrontError, ValueError):
    """A point configuration is too degenerate to determine a transform."""


class SingularCovarianceError(RobustFrontError, ArithmeticError):
    """A covariance matrix is singular even after regularization."""


class SolverFailure(RobustFrontError, RuntimeError):
    """An iterative solver did not converge.

    ``best`` carries the best iterate found so far and ``partial`` an optional
    partial result of the enclosing estimator.
    """

    def __init__(self, message, best=None, partial=None):
        super().__init__(message)
        self.best = best
        self.partial = partial


class SingularSystemError(RobustFrontError, ArithmeticError):
    """A linear system in an M-step is not invertible."""


class ModelError(RobustFrontError, ValueError):
    """A shape model is malformed or lacks a required part."""


class UndefinedCorrelationError(RobustFrontError, ArithmeticError):
    """ZNCC is undefined because a block has zero variance."""


class NoAdmissibleShiftError(RobustFrontError, ValueError):
    """No shift of the search window produced a fully valid region pair."""


class DegenerateScaleError(RobustFrontError, ValueError):
    """Landmarks do not determine a scale factor."""


class MalformedFileError(RobustFrontError, ValueError):
    """A file does not follow its documented layout."""


class UnsupportedFormatError(MalformedFileError):
    """A file is well-formed but uses an unsupported variant."""


class ChecksumError(MalformedFileError):
    """Stored and recomputed payload checksums differ."""
