"""Exception types shared across the library."""


class GicsimError(Exception):
    """Base class for all gicsim errors."""


class NotSkewError(GicsimError):
    """Matrix handed to a vee-map is not skew-symmetric."""


class MalformedSe3Error(GicsimError):
    """4x4 matrix is not a valid se(3) element (nonzero bottom row)."""


class NearPiRotationError(GicsimError):
    """Rotation angle too close to pi for the principal-branch log."""


class FrameMismatchError(GicsimError):
    """Twist or wrench carried the wrong frame tag for this operation."""


class DimensionMismatchError(GicsimError):
    """Vector length does not match the model's joint count."""


class SingularJacobianError(GicsimError):
    """Body Jacobian too ill-conditioned for the operational-space transform."""


class NumericalBlowupError(GicsimError):
    """Integrator produced joint velocities beyond the sanity bound."""


class NonFiniteInputError(GicsimError):
    """Policy input contained NaN or infinity."""


class GradientMismatchError(GicsimError):
    """Analytic gradient disagreed with the finite-difference check."""


class DegenerateTrainingError(GicsimError):
    """Training produced a non-finite validation loss."""


class SchemaVersionError(GicsimError):
    """Persisted file declares an unsupported schema version."""


class CorruptPayloadError(GicsimError):
    """Persisted file failed to parse or decode."""


class MissingPolicyError(GicsimError):
    """A required policy file is absent."""


class ExpertFailureRateError(GicsimError):
    """Scripted expert fell below the required success rate during collection."""


class UnreachablePoseError(GicsimError):
    """Inverse kinematics failed to reach the requested end-effector pose."""


class BindFailureError(GicsimError):
    """Teleop server could not bind its address."""
