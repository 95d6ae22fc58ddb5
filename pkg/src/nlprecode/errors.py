"""Exception types shared across the package."""


class NlPrecodeError(Exception):
    """Base class for all package errors."""


class InvalidDimensions(NlPrecodeError, ValueError):
    pass


class AngleOutOfRange(NlPrecodeError, ValueError):
    pass


class BadMagic(NlPrecodeError, ValueError):
    pass


class DimensionMismatch(NlPrecodeError, ValueError):
    pass


class UnknownIbo(NlPrecodeError, KeyError):
    pass


class IllConditionedBasis(NlPrecodeError, ArithmeticError):
    pass


class NegativeSnidr(NlPrecodeError, ValueError):
    pass


class ZeroMatrix(NlPrecodeError, ValueError):
    pass


class ZeroChannel(NlPrecodeError, ValueError):
    pass


class SingularChannel(NlPrecodeError, ArithmeticError):
    pass


class ZeroGainSaturatedAntenna(NlPrecodeError, ValueError):
    pass


class NoBracket(NlPrecodeError, ArithmeticError):
    pass


class ShapeMismatch(NlPrecodeError, ValueError):
    pass


class VersionMismatch(NlPrecodeError, ValueError):
    pass


class Divergence(NlPrecodeError, ArithmeticError):
    """Training loss became non-finite; carries the last good parameters."""

    def __init__(self, msg, params=None, history=None):
        super().__init__(msg)
        self.params = params
        self.history = history


class ConfigError(NlPrecodeError, ValueError):
    pass
