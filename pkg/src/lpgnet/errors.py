"""Exception hierarchy shared by every module.

The CLI maps these onto distinct exit codes, so keep the split between
contract violations, malformed inputs and training divergence intact.
"""


class LpgNetError(Exception):
    """Base class for all package errors."""


class ContractError(LpgNetError, ValueError):
    """A documented precondition was violated by the caller."""


class DimensionError(ContractError):
    """Tensor shapes do not agree for the requested operation."""


class SchemaError(LpgNetError, ValueError):
    """An input file does not conform to its declared format."""


class ParseError(SchemaError):
    """A line of a feature file could not be decoded."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DivergenceError(LpgNetError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
