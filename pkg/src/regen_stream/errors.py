"""Exception types shared across the engine."""


class RegenError(Exception):
    """Base class for all engine errors."""


class ConfigMismatchError(RegenError, ValueError):
    pass


class ShapeError(RegenError, ValueError):
    """Raised when tensor or array shapes disagree with what an op or layer expects."""

    def __init__(self, message: str, layer: str | None = None):
        self.layer = layer
        if layer is not None:
            message = f"[{layer}] {message}"
        super().__init__(message)


class UnsupportedRateError(RegenError, ValueError):
    pass


class CheckpointError(RegenError):
    pass


class StreamError(RegenError, RuntimeError):
    pass


class TrainingError(RegenError, RuntimeError):
    pass
