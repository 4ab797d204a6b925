"""Exception hierarchy shared by every module."""


class SprError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(SprError, ValueError):
    pass


class SingularSystem(SprError, ArithmeticError):
    """lambda == 0 and the Gram matrix is rank deficient; regularize."""


class EmptySequence(SprError, ValueError):
    pass


class UnknownExponent(SprError, KeyError):
    pass


class HorizonOutOfRange(SprError, ValueError):
    pass


class UnknownHorizon(SprError, KeyError):
    pass


class CorruptModelFile(SprError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NonFiniteLoss(SprError, ArithmeticError):
    pass


class InsufficientPairs(SprError, ValueError):
    pass


class ZeroProbabilityObservation(SprError, ValueError):
    pass


class DegenerateData(SprError, ValueError):
    pass


class TooFewSequences(SprError, ValueError):
    pass


class ParseError(SprError, ValueError):
    def __init__(self, message, line=None, column=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.column = column


class InconsistentDims(ParseError):
    pass


class NoValidPositions(SprError, ValueError):
    pass


class InvalidConfig(SprError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
