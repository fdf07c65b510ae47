"""Exception types raised across eddyscope."""


class EddyscopeError(Exception):
    """Base class for all package errors."""


class DomainError(EddyscopeError, ValueError):
    """An argument lies outside the admissible domain."""


class ZeroRowViolation(EddyscopeError):
    """A CPT breaks the structural zero-row pattern."""


class DegenerateTensor(EddyscopeError):
    """All singular values vanish, normalization is undefined."""


class SingularPoint(EddyscopeError):
    """A kernel was evaluated at coincident points."""


class GeometryError(EddyscopeError):
    """Target and sensor positions are incompatible."""


class RankError(EddyscopeError):
    """Selected signal rank leaves no noise subspace."""


class BisectionFailure(EddyscopeError):
    """No separation in the bracket separates the two targets."""


class InconsistentInputs(EddyscopeError):
    """Pieces that must agree (frequency, q index, position) do not."""


class LengthMismatch(EddyscopeError, ValueError):
    """Descriptor lengths differ."""


class DuplicateLabel(EddyscopeError, ValueError):
    """A dictionary label was given twice."""


class EmptyGrid(EddyscopeError):
    """Voxelization produced no cells."""


class GridMismatch(EddyscopeError):
    """Current fields were computed on different grids or parameters."""


class NoConvergence(EddyscopeError):
    """Iterative solver did not reach tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConfigError(EddyscopeError):
    """Experiment configuration is malformed."""


class IllConditioned(UserWarning):
    """Retained condition number of a least-squares problem is large."""


class ModelValidityWarning(UserWarning):
    """Induction number exceeds the range where the asymptotic model holds."""
