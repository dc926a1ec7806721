"""Exception types raised across the package."""


class FactFuseError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(FactFuseError, ValueError):
    pass


class EmptyInput(FactFuseError, ValueError):
    pass


class AllMasked(FactFuseError, ValueError):
    """Every key of an attention call is masked out."""


class ConfigError(FactFuseError, ValueError):
    pass


class IndexOutOfRange(FactFuseError, IndexError):
    pass


class NotADistribution(FactFuseError, ValueError):
    pass


class NoRecordedForward(FactFuseError, RuntimeError):
    pass


class NonFiniteGradient(FactFuseError, FloatingPointError):
    def __init__(self, name, where=None):
        self.name = name
        self.where = where
        msg = f"non-finite gradient for parameter {name!r}"
        if where is not None:
            msg += f" ({where})"
        super().__init__(msg)


class BudgetExceeded(FactFuseError, ValueError):
    pass


class NoEvidence(FactFuseError, ValueError):
    pass


class UnknownLabel(FactFuseError, ValueError):
    pass


class EmptyDataset(FactFuseError, ValueError):
    pass


class ConflictingCell(FactFuseError, ValueError):
    pass
