"""Exception taxonomy shared across the package."""


class DualPathError(Exception):
    """Base class for all package errors."""


class DimensionError(DualPathError):
    """Operand shapes are inconsistent with the operation."""


class GeometryError(DualPathError):
    """Spatial extents violate a geometric precondition (divisibility, output size)."""


class ConfigError(DualPathError):
    """A configuration value is outside its legal range."""


class ContractError(DualPathError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class ResourceError(DualPathError):
    """A configured resource cap would be exceeded."""


class NumericsError(DualPathError):
    """A forward value became non-finite."""


class IngestionError(DualPathError):
    """Input data cannot be ingested (too small, malformed image, ...)."""


class TrainingDivergenceError(DualPathError):
    """Loss became non-finite during training."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class CheckpointError(DualPathError):
    """Base class for checkpoint load failures."""


class CheckpointMagicError(CheckpointError):
    """File does not start with the checkpoint magic."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""

    def __init__(self, found, expected):
        super().__init__(f"checkpoint version {found} not supported (expected {expected})")
        self.found = found
        self.expected = expected


class CheckpointTruncatedError(CheckpointError):
    """File ended before the declared payload was read."""
