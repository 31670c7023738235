"""Exception types raised across the package."""


class MTMLError(Exception):
    """Base class for every error raised by mtml_reid."""


class DegenerateCameraError(MTMLError):
    pass


class InvalidSampleError(MTMLError):
    pass


class InsufficientIdentitiesError(MTMLError):
    pass


class ParseError(MTMLError):
    pass


class FormatVersionError(MTMLError):
    pass


class ShapeError(MTMLError, ValueError):
    pass


class NoSuchHeadError(MTMLError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NumericFailure(MTMLError, FloatingPointError):
    pass


class IncompatibleCheckpoint(MTMLError):
    pass


class LabelOutOfRange(MTMLError, IndexError):
    pass


class EmptyBatch(MTMLError):
    pass


class EmptyIdentity(MTMLError):
    pass


class StaleAssignment(MTMLError):
    pass


class IncompatibleArtifacts(MTMLError):
    pass
