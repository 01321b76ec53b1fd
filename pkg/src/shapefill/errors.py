"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when tensor shapes, value ranges, or flags are inconsistent."""


class ManifestError(RuntimeError):
    """Raised when a dataset manifest cannot be read or parsed."""


class CheckpointError(RuntimeError):
    """Raised when a checkpoint is missing or corrupted."""


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss or parameter is detected during training.

    Carries a reference to the last good checkpoint, if any was written.
    """

    def __init__(self, message: str, last_checkpoint: str | None = None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
