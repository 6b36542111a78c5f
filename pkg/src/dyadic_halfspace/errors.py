"""Exception types raised by the package."""

from __future__ import annotations


class DyadicError(ValueError):
    """Base class for all package errors."""


class NonAdmissibleExponent(DyadicError):
    pass


class SubResolutionCube(DyadicError):
    pass


class NotCovered(DyadicError):
    pass


class MixedResolution(DyadicError):
    pass


class ZeroWeightCell(DyadicError):
    pass


class TooLarge(DyadicError):
    pass


class GuardExceeded(DyadicError):
    pass


class InfiniteConstant(DyadicError):
    pass
