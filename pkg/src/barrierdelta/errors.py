"""Exception hierarchy.

Two families matter for the CLI exit codes: ValidationError (exit 1) for
anything wrong with the inputs, NumericalError (exit 2) for solver-level
failures on valid inputs.
"""


class ValidationError(ValueError):
    """Invalid configuration, contract or arguments."""


class BarrierCrossing(ValidationError):
    """Lower barrier meets or exceeds the upper barrier somewhere on [0, T]."""


class NonpositiveBarrier(ValidationError):
    """Barrier level is not strictly positive."""


class NonpositiveMaturity(ValidationError):
    """Contract maturity is not strictly positive."""


class SpotOutsideCorridor(ValidationError):
    """Initial spot is not strictly between the barriers at t = 0."""


class ProfileMismatch(ValidationError):
    """Delta profile was solved for a different contract or grid."""


class UnsupportedConfiguration(ValidationError):
    """Requested method does not apply to this model/contract combination."""


class ConfigError(ValidationError):
    """Malformed run configuration file."""


class NumericalError(RuntimeError):
    """Numerical failure inside an otherwise valid computation."""


class QuadratureFailure(NumericalError):
    """Adaptive quadrature could not reach the requested tolerance."""


class AssemblyFailure(NumericalError):
    """Kernel evaluation failed while assembling a Volterra system."""


class SingularDiagonal(NumericalError):
    """Diagonal weight of the lower-triangular system is numerically zero."""


class DeterminantVanishing(NumericalError):
    """Transform-matrix determinant vanishes on the inversion contour."""


class InversionUnstable(NumericalError):
    """Numerical Laplace inversion disagrees between node counts."""
