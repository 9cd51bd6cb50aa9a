"""Exception hierarchy shared across the package."""


class IdCorrError(Exception):
    """Base class for all errors raised by idcorr."""


class ZeroNormVector(IdCorrError, ValueError):
    pass


class EmptySet(IdCorrError, ValueError):
    pass


class EmptyTracklet(EmptySet):
    pass


class EmptyIdentitySet(EmptySet):
    pass


class DimensionMismatch(IdCorrError, ValueError):
    pass


class ShapeMismatch(IdCorrError, ValueError):
    pass


class NonFiniteValues(IdCorrError, ValueError):
    pass


class NonFiniteLogits(NonFiniteValues):
    pass


class InvalidConfig(IdCorrError, ValueError):
    pass


class InvalidSpec(IdCorrError, ValueError):
    pass


class InstanceTooLarge(IdCorrError, ValueError):
    pass


class UniverseMismatch(IdCorrError, ValueError):
    pass


class DatasetFormatError(IdCorrError, ValueError):
    """Raised for malformed dataset files (bad magic, truncated records, ...)."""
