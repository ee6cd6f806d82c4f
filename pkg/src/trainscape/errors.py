"""Exception types shared across the toolkit."""


class TrainscapeError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(TrainscapeError):
    """Matrix shapes do not compose."""


class ContractError(TrainscapeError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class DegenerateInputError(TrainscapeError):
    """Input is degenerate for the requested transform (e.g. constant logits)."""


class OptimizationError(TrainscapeError):
    """Optimizer received non-finite gradients."""

    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


class TrainingError(TrainscapeError):
    """A training loop diverged (NaN loss)."""


class SynthesisError(TrainscapeError):
    """Boundary synthesis could not reach its target within the attempt budget."""


class ToleranceError(TrainscapeError):
    """An iterative calibration failed to converge to tolerance."""


class ConvergenceError(TrainscapeError):
    """An iterative solver exceeded its iteration budget."""


class CheckpointError(TrainscapeError):
    """Checkpoint files are missing, out of sequence, or inconsistent."""


class ConfigError(TrainscapeError):
    """Pipeline configuration is malformed."""


class BundleError(TrainscapeError):
    """Epoch bundle files are missing, corrupt, or of an unknown version."""


class RenderError(TrainscapeError):
    """Landscape rasterization hit non-finite decoder output."""
