"""Exception hierarchy shared across the package."""


class JointFaceError(Exception):
    """Base class for all package errors."""


class InvalidInputError(JointFaceError, ValueError):
    """Input arrays have the wrong shape, are non-finite, or violate a precondition."""


class DegeneratePoseError(JointFaceError):
    """A projection matrix row vanished so no rotation can be recovered."""


class InsufficientConstraintsError(JointFaceError):
    """Too few effectively weighted points to determine the unknowns."""


class DegenerateGeometryError(JointFaceError):
    """The weighted normal matrix of a pose solve is singular."""


class NumericError(JointFaceError):
    """A linear system that should be well posed could not be solved."""


class RankDeficiencyError(NumericError):
    """Unregularized least squares with a rank-deficient design."""


class UndefinedMetricError(JointFaceError):
    """An evaluation metric is undefined for the given inputs."""


class ModelFormatError(JointFaceError):
    """A serialized model or dataset file is malformed."""


class UnsupportedVersionError(ModelFormatError):
    """A serialized model carries a version tag this code cannot read."""


class OracleUnavailableError(JointFaceError):
    """The ground-truth oracle descriptor was requested without ground truth."""
