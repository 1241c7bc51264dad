"""Exception hierarchy. Each class carries a short machine-readable category."""


class ColonTrackError(Exception):
    category = "error"


class InvalidInputError(ColonTrackError, ValueError):
    category = "invalid-input"


class EmptyDatasetError(InvalidInputError):
    category = "empty-dataset"


class ConfigurationError(ColonTrackError):
    category = "configuration"


class DegenerateRegistrationError(ColonTrackError):
    category = "degenerate-registration"


class CheckpointError(ColonTrackError):
    category = "checkpoint"


class StorageError(ColonTrackError, OSError):
    category = "io"


class TrainingDivergedError(ColonTrackError):
    category = "training-diverged"

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")
