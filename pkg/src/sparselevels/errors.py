"""Exception types shared across the package."""


class SparseLevelsError(Exception):
    """Base class for all errors raised by this package."""


class UnsupportedCapabilityError(SparseLevelsError):
    """A level function was called on a level kind that does not support it."""


class FormatError(SparseLevelsError):
    """Invalid format declaration: bad property flags, unknown preset, bad params."""


class AssemblyError(SparseLevelsError):
    """Storage assembly violated a level protocol (out-of-order append, bad coord)."""


class HashSegmentFullError(AssemblyError):
    """A hashed segment ran out of empty slots; the segment width is too small."""


class NotationError(SparseLevelsError):
    """Syntax error in an index-notation expression."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at column {position})"
        super().__init__(message)
        self.position = position


class ValidationError(SparseLevelsError):
    """Expression does not type-check against the bound tensors."""


class CycleError(SparseLevelsError):
    """Tensor paths impose contradictory orderings on the index variables."""

    def __init__(self, message, cycle=()):
        super().__init__(message)
        self.cycle = tuple(cycle)


class UnsupportedMergeError(SparseLevelsError):
    """The expression/format combination has no sound merge strategy."""


class UnsupportedOutputError(SparseLevelsError):
    """The output format cannot receive the result the schedule produces."""


class CodegenError(SparseLevelsError):
    """The schedule contains a construct the C backend does not emit."""
