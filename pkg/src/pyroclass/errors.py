"""Exception hierarchy shared by all pyroclass modules."""


class PyroclassError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(PyroclassError):
    """Tensor extents are invalid or do not conform for an operation."""


class ConfigError(PyroclassError):
    """A model/training/embedding configuration value is out of range."""


class NumericError(PyroclassError):
    """Non-finite values where finite ones are required."""


class InvalidInputError(PyroclassError):
    """An evaluation input is structurally unusable (empty, unsorted, ...)."""


class DataError(PyroclassError):
    """Manifest, image or label ingestion problem."""


class DecodeError(DataError):
    """Image file could not be decoded as 8-bit grayscale."""


class LabelError(DataError):
    """A class label or class index is unknown or malformed."""


class StratificationError(DataError):
    """A class is too small for the requested stratified split."""


class CheckpointError(PyroclassError):
    """Checkpoint file is truncated, versioned wrong, or inconsistent."""


class TrainingDivergedError(PyroclassError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class EmbeddingDivergedError(PyroclassError):
    """t-SNE optimization produced non-finite gradients."""
