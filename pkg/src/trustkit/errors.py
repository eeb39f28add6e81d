"""Exception types shared across the toolkit."""


class DimensionError(ValueError):
    """Shapes of the operands are incompatible."""


class ParameterError(ValueError):
    """A configuration value or argument is out of its valid range."""


class ContractError(RuntimeError):
    """A documented precondition was violated by the caller."""


class EnumerationCapExceeded(RuntimeError):
    """Exact support enumeration was requested beyond the configured cap."""


class SingularMatrixError(RuntimeError):
    """A linear system that must be solvable is singular."""


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, truncated, or inconsistent."""


class DatasetError(RuntimeError):
    """A dataset file failed checksum or schema validation."""
