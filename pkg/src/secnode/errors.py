"""Exception types raised across the package."""


class SecnodeError(Exception):
    """Base class for all model errors."""


class NonBlockAlignedLength(SecnodeError, ValueError):
    pass


class RoundIndexOutOfRange(SecnodeError, ValueError):
    pass


class KeyIvOverflow(SecnodeError, ValueError):
    pass


class AuthenticationFailure(SecnodeError):
    """Tag mismatch; no plaintext is released."""


class WeightOutOfRange(SecnodeError, ValueError):
    pass


class ImageSmallerThanFilter(SecnodeError, ValueError):
    pass


class DimensionMismatch(SecnodeError, ValueError):
    pass


class UnsupportedFilterSize(SecnodeError, ValueError):
    pass


class VddOutOfRange(SecnodeError, ValueError):
    pass


class UnknownKernel(SecnodeError, KeyError):
    pass


class UnknownUnit(SecnodeError, KeyError):
    pass


class UnknownMemory(SecnodeError, KeyError):
    pass


class TileInfeasible(SecnodeError):
    pass


class CyclicDependency(SecnodeError):
    pass


class CapacityExceeded(SecnodeError):
    pass


class PeriodTooShort(SecnodeError, ValueError):
    pass


class UnknownUseCase(SecnodeError, KeyError):
    pass
