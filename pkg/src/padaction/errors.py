"""Exception types shared across the pipeline."""


class PadActionError(Exception):
    """Base class for all library errors."""


class DimensionError(PadActionError, ValueError):
    pass


class TrackFormatError(PadActionError, ValueError):
    """Malformed track file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidSpecError(PadActionError, ValueError):
    pass


class ConfigError(PadActionError, ValueError):
    pass


class ProtocolError(PadActionError, RuntimeError):
    pass


class NumericError(PadActionError, ArithmeticError):
    """Non-finite value in a numeric routine."""

    def __init__(self, message, step=None, last_finite_loss=None):
        self.step = step
        self.last_finite_loss = last_finite_loss
        super().__init__(message)


class FrameReadError(PadActionError, IOError):
    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)
