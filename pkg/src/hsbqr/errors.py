"""Exception types raised across the package."""


class DomainError(ValueError):
    """A parameter lies outside the domain of the requested operation."""


class DimensionError(ValueError):
    """Array shapes do not agree."""


class NumericalError(ArithmeticError):
    """A factorization failed even after diagonal jitter."""


class ChainDivergenceError(RuntimeError):
    """The Gibbs state became non-finite."""

    def __init__(self, update, message=""):
        self.update = update
        super().__init__(f"non-finite state after {update} update" + (f": {message}" if message else ""))


class IngestionError(ValueError):
    """An input file could not be parsed into a panel."""
