"""Exception hierarchy shared across the package."""


class TarError(Exception):
    """Base class for all package errors."""


class InvalidInputError(TarError, ValueError):
    """Malformed arguments or data (bad shapes, masks, files)."""


class InvalidDimensionError(InvalidInputError):
    pass


class InvalidEdgeError(InvalidInputError):
    pass


class IsolatedRegionError(InvalidInputError):
    pass


class InvalidMaskError(InvalidInputError):
    pass


class InvalidIntervalError(InvalidInputError):
    pass


class IngestionError(InvalidInputError):
    pass


class ParameterRangeError(TarError, ValueError):
    """A model parameter lies outside its admissible range."""


class UnavailableTruthError(TarError):
    pass


class NumericalFailureError(TarError, ArithmeticError):
    """A numerical routine failed (factorization, eigen-solver, ...)."""


class NotPositiveDefiniteError(NumericalFailureError):
    pass


class SingularDesignError(NumericalFailureError):
    pass


class IllConditionedCorrelationError(NumericalFailureError):
    pass


class RepresentationMismatchError(NumericalFailureError):
    pass


class NoConvergenceError(NumericalFailureError):
    pass
