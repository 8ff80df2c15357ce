"""Exception types raised across the package."""


class SmpError(ValueError):
    """Base class for all model-level errors."""


class EstimationError(SmpError):
    """Raised when data cannot support the requested estimate."""


class PreconditionError(SmpError):
    """Raised when a solver is queried outside its domain.

    ``where`` carries the offending (state, backward) pairs, when relevant.
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = list(where or [])


class ReducibleChainError(SmpError):
    def __init__(self, components):
        self.components = [sorted(int(s) for s in c) for c in components]
        super().__init__(
            "embedded chain is reducible; strongly connected components: "
            f"{self.components}"
        )


class GridCapError(SmpError):
    """Raised when the accumulation grid outgrows the configured cap."""
