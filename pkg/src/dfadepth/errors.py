"""Exception types raised across the toolkit."""


class ShapeError(ValueError):
    """Array shape does not match what an operation expects."""


class NumericError(FloatingPointError):
    """A non-finite value appeared in activations, losses or gradients."""


class TrainingFailure(RuntimeError):
    def __init__(self, message, final_error=None):
        super().__init__(message)
        self.final_error = final_error


class UnsupportedArchitectureError(ValueError):
    pass


class ArtifactFormatError(ValueError):
    """Raised when a checkpoint, artifact file or manifest cannot be decoded."""
