"""Deformation-aware colonoscope tracking on a synthetic colon phantom."""

from colontrack.errors import (
    CheckpointError,
    ColonTrackError,
    ConfigurationError,
    DegenerateRegistrationError,
    EmptyDatasetError,
    InvalidInputError,
    StorageError,
    TrainingDivergedError,
)
from colontrack.geometry import ColonoscopeShape, ColonShape, EstimatedColonShape, RigidTransform

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ColonShape",
    "ColonTrackError",
    "ColonoscopeShape",
    "ConfigurationError",
    "DegenerateRegistrationError",
    "EmptyDatasetError",
    "EstimatedColonShape",
    "InvalidInputError",
    "RigidTransform",
    "StorageError",
    "TrainingDivergedError",
]
