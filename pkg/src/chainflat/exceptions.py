"""Exception and warning types raised by chainflat."""


class ChainflatError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(ChainflatError, ValueError):
    """Input geometry or parameters fail a precondition."""


class IOSchemaError(ChainflatError):
    """A file or serialized payload could not be read."""


class DimensionMismatch(ValidationError):
    pass


class IntersectionDeficient(ValidationError):
    """Two segments do not share an (m-1)-dimensional direction space."""


class NoAffineIntersection(ValidationError):
    pass


class DegenerateFold(ValidationError):
    pass


class NotMonotonic(ValidationError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class FoldHyperplaneDegenerate(ValidationError):
    pass


class ParameterConstraintViolated(ValidationError):
    pass


class GatingMarginTooSmall(ValidationError):
    pass


class GatingInfeasible(ValidationError):
    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class StitchingMissing(ValidationError):
    pass


class InvalidDims(ValidationError):
    pass


class InvalidSpec(ValidationError):
    pass


class MetadataMissing(ValidationError):
    pass


class SameRegionViolated(ValidationError):
    pass


class PointOffChain(ValidationError):
    pass


class RankDeficient(ValidationError):
    pass


class NonAdjacentLabels(ValidationError):
    pass


class GenerationFailed(ChainflatError):
    pass


class BoundViolated(ChainflatError, AssertionError):
    """A measured amplification exceeded a bound that is a theorem for the given c."""


class SchemaVersionMismatch(IOSchemaError):
    pass


class MalformedInput(IOSchemaError, ValueError):
    pass


class OnRegionBoundary(UserWarning):
    """A point sits on a RELU boundary; the tied unit is treated as inactive."""


class MonotonicityWarning(UserWarning):
    pass


class CTooSmall(UserWarning):
    """The supplied c does not bound 1/(a.v) for every fold."""
