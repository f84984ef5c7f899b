"""Exception taxonomy for the ductflow solvers.

Every solver failure mode maps to a distinct exception class so callers
(and the CLI exit-code logic) can react without string matching.
"""


class DuctflowError(Exception):
    """Base class for all ductflow errors."""


class ConfigError(DuctflowError):
    """Run configuration failed validation (CLI exit code 2)."""


class InvalidGeometryError(DuctflowError):
    """Cross-section or duct geometry parameters are unusable."""


class UnsupportedGeometryError(DuctflowError):
    """Requested geometry exists but is outside the supported set."""


class DimensionMismatchError(DuctflowError):
    """Field shape does not match the grid/basis it is paired with."""


class InadmissibleDataError(DuctflowError):
    """Input data cannot produce an accelerating transonic state."""


class SolverDivergedError(DuctflowError):
    """A nonlinear scalar/vector solve failed to converge."""


class AdmissibilityViolationError(DuctflowError):
    """A structural sign/multiplier inequality fails on the grid."""


class GridIncompatibilityError(DuctflowError):
    """Axial grid does not satisfy a nodal-alignment requirement."""


class StateTooLargeError(DuctflowError):
    """Iterate left the neighbourhood where coefficient assembly is valid."""


class SingularSystemError(DuctflowError):
    """Discrete linear system could not be factorized."""

    def __init__(self, message, sigma=None, n_modes=None):
        super().__init__(message)
        self.sigma = sigma
        self.n_modes = n_modes


class ContinuationFailureError(DuctflowError):
    """Regularization ladder did not produce a Cauchy sequence."""


class DegenerateCoefficientError(DuctflowError):
    """A two-point BVP coefficient degenerates on the solve interval."""


class CompatibilityError(DuctflowError):
    """Boundary/corner compatibility residual exceeded its tolerance."""


class InvalidSourceError(DuctflowError):
    """Vector source violates a divergence/compatibility precondition."""


class DataInconsistencyError(DuctflowError):
    """Entrance data admits no single-valued stream potential."""


class StagnationError(DuctflowError):
    """Axial speed lost positivity; transport direction undefined."""


class GeometryViolationError(DuctflowError):
    """A traced characteristic left the duct beyond tolerance."""


class DegenerateSonicError(DuctflowError):
    """Mach-squared field is not strictly increasing along the axis."""


class NoSonicPointError(DuctflowError):
    """Mach-squared field does not cross unity inside the duct."""


class NonContractionError(DuctflowError):
    """Fixed-point iteration stopped contracting."""


class BallEscapeError(DuctflowError):
    """A fixed-point iterate left the prescribed solution ball."""

    def __init__(self, message, norms=None):
        super().__init__(message)
        self.norms = list(norms) if norms is not None else None
