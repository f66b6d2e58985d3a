"""Exception types shared across the library."""


class UnitarizationError(Exception):
    """Base class for all library errors."""


class DegenerateVector(UnitarizationError):
    """A Gram-Schmidt residual fell below the degeneracy floor (linear dependence)."""


class LayoutMismatch(UnitarizationError):
    """Two circuits or registers cannot be combined."""


class UnknownOracle(UnitarizationError):
    """A gate references an oracle id that is not registered."""


class DimMismatch(UnitarizationError):
    """Vector or matrix dimensions are inconsistent."""


class TooWide(UnitarizationError):
    """A dense computation was requested beyond the configured width cap."""


class InvalidDelta(UnitarizationError):
    """A residual lower bound delta must be positive."""


class EstimationFailure(UnitarizationError):
    """An exact-mode estimate came out inconsistent with unit states."""


class BudgetExceeded(UnitarizationError):
    """No feasible internal error budget exists for the requested accuracy."""


class NonOrthogonalInput(UnitarizationError):
    """Input oracle states violate the orthonormality premise."""
