"""Exception hierarchy shared by every orckd module."""


class OrcError(Exception):
    """Base class for all errors raised by orckd."""


class ShapeError(OrcError, ValueError):
    pass


class BroadcastError(ShapeError):
    pass


class DomainError(OrcError, ValueError):
    pass


class SpecError(OrcError, ValueError):
    pass


class LadderError(OrcError, ValueError):
    pass


class LabelError(OrcError, ValueError):
    pass


class ConfigError(OrcError, ValueError):
    """Invalid configuration; ``key`` names the offending dotted key when known."""

    def __init__(self, message, key=None):
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)
        self.key = key


class StateError(OrcError, RuntimeError):
    pass


class FormatError(OrcError, ValueError):
    pass


class TrainError(OrcError, RuntimeError):
    """Training diverged; ``stage`` names the ORC stage where it happened."""

    def __init__(self, message, stage=None):
        if stage is not None:
            message = f"[{stage}] {message}"
        super().__init__(message)
        self.stage = stage
