"""Exception types shared across the package."""


class MeshFeedbackError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MeshFeedbackError):
    """Invalid sizes, incompatible shapes, or inconsistent options."""


class DegenerateRotationError(MeshFeedbackError):
    """6D rotation input whose columns are (near-)parallel or (near-)zero."""


class DegenerateAlignmentError(MeshFeedbackError):
    """Point configuration too degenerate for a similarity alignment."""


class GenerationError(MeshFeedbackError):
    """Synthetic sample generation exhausted its retry budget."""


class CheckpointMismatchError(MeshFeedbackError):
    """Checkpoint was produced under an incompatible configuration."""


class TrainingDivergedError(MeshFeedbackError):
    """Loss became non-finite during training."""
