"""Exception hierarchy shared by all modules."""


class SpanRankError(Exception):
    """Base class for data errors raised by this package."""


class EmptyClass(SpanRankError):
    pass


class DimensionError(SpanRankError, ValueError):
    pass


class SingularDenominator(SpanRankError):
    pass


class DegenerateDenominator(SpanRankError):
    pass


class NonFiniteObjective(SpanRankError):
    """Raised when an accepted solver iterate has a non-finite objective.

    The best iterate seen so far and the partial trace are attached so the
    caller can recover.
    """

    def __init__(self, message, best=None, trace=None):
        super().__init__(message)
        self.best = best
        self.trace = trace


class EmptySelection(SpanRankError):
    pass


class InvalidSpec(SpanRankError, ValueError):
    pass


class UnsupportedFormat(SpanRankError):
    pass


class ImageTooSmall(SpanRankError):
    pass


class NonFiniteTrace(SpanRankError):
    pass


class EmptySplit(SpanRankError):
    pass
