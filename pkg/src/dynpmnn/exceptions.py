"""Exception types raised across the package."""


class DynPMNNError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DynPMNNError, ValueError):
    pass


class NonFiniteInputError(DynPMNNError, ValueError):
    pass


class NonScalarLossError(DynPMNNError, ValueError):
    pass


class TapeConsumedError(DynPMNNError, RuntimeError):
    """Raised when backward is run a second time on the same tape."""


class NonFiniteStateError(DynPMNNError, FloatingPointError):
    """An integrated state left the finite reals (explicit Euler blow-up)."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at Euler step {step}")


class GridError(DynPMNNError, ValueError):
    """Invalid integration grid (non-integral or non-positive step count)."""


class NonMonotonicTimesError(DynPMNNError, ValueError):
    pass


class DimMismatchError(DynPMNNError, ValueError):
    pass


class SchemaMismatchError(DynPMNNError, ValueError):
    pass


class ParseError(DynPMNNError, ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class BadFractionsError(DynPMNNError, ValueError):
    pass


class LeakageError(DynPMNNError, ValueError):
    """Standardizer fitted on rows outside the training split."""


class EmptySpaceError(DynPMNNError, ValueError):
    pass
