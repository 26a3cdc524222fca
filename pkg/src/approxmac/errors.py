"""Exception types shared across the package."""


class ApproxMacError(Exception):
    """Base class for every error raised by approxmac."""

    #: name of the graph node that raised, attached by ``nncore.forward``
    node = None


class MostNegativeError(ApproxMacError, ValueError):
    """The most negative two's-complement word has no magnitude."""


class AccOverflowError(ApproxMacError, OverflowError):
    """The accumulator guard-bit budget was exceeded."""


class InvalidSpecError(ApproxMacError, ValueError):
    pass


class ZeroReferenceError(ApproxMacError, ZeroDivisionError):
    """Relative error requested against an exact product of zero."""


class ShapeMismatchError(ApproxMacError, ValueError):
    pass


class ModelParseError(ApproxMacError, ValueError):
    pass


class NonFiniteWeightError(ApproxMacError, ValueError):
    pass


class BadMagicError(ApproxMacError, ValueError):
    pass


class CountMismatchError(ApproxMacError, ValueError):
    pass
