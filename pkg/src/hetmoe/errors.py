"""Exception hierarchy shared by every module."""


class HetMoEError(Exception):
    """Base class for all package errors."""


class ConfigError(HetMoEError, ValueError):
    """Invalid hyperparameter or configuration value."""


class ContractError(HetMoEError, ValueError):
    """A documented precondition of an operation was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class DomainError(ContractError):
    """An input lies outside the domain of a function (e.g. log of a non-positive)."""


class DegenerateRowError(ContractError):
    """A target row with zero norm was handed to a cosine loss."""


class EmptySetError(ContractError):
    """An index set that must be nonempty was empty."""


class MetaPathError(ContractError):
    """A meta-path is malformed or type-incompatible with its graph."""


class ValidationError(HetMoEError, ValueError):
    """Graph or dataset content violates a structural invariant."""


class DataError(ValidationError):
    """Numeric data is non-finite or otherwise unusable."""


class SamplingError(ContractError):
    """Positive or negative pairs cannot be drawn from a view."""


class SplitError(ContractError):
    """A class has too few labeled nodes for the requested few-shot split."""


class NumericalError(HetMoEError, ArithmeticError):
    """A loss or intermediate became non-finite during training."""
