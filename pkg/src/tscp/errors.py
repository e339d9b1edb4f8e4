"""Exception types raised across the package."""


class TSCPError(Exception):
    """Base class for all errors raised by this package."""


class InvalidLevel(TSCPError, ValueError):
    """Miscoverage level outside the open interval (0, 1)."""


class DegenerateDimension(TSCPError, ValueError):
    """A residual column has zero (or non-finite) spread."""

    def __init__(self, dimension: int, message: str | None = None):
        self.dimension = dimension
        super().__init__(message or f"residual column {dimension} has zero variance")


class ShapeError(TSCPError, ValueError):
    pass


class ShiftTooSmall(TSCPError, ValueError):
    pass


class EmptyCell(TSCPError, ValueError):
    pass


class BudgetExceeded(TSCPError, RuntimeError):
    pass


class RankDeficient(TSCPError, ArithmeticError):
    pass
