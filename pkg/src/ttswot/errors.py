"""Exception types shared across the pipeline."""


class TTSWoTError(Exception):
    """Base class for all package errors."""


class LengthError(TTSWoTError, ValueError):
    """Signal too short for the requested analysis."""


class ConfigError(TTSWoTError, ValueError):
    """Invalid configuration value or unknown configuration key."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class FormatError(TTSWoTError, ValueError):
    """Malformed or unsupported file."""


class ShapeError(TTSWoTError, ValueError):
    """Operands with incompatible shapes."""


class ParameterError(TTSWoTError, ValueError):
    """Out-of-domain numeric parameter (temperature, concentration, ...)."""


class NumericError(TTSWoTError, FloatingPointError):
    """Non-finite values appeared during a computation."""


class ConvergenceError(TTSWoTError, RuntimeError):
    def __init__(self, message, spread=None):
        super().__init__(message)
        self.spread = spread


class MetricError(TTSWoTError, ValueError):
    """Metric undefined on the given input (e.g. empty sequences)."""


class UnknownSpeakerError(TTSWoTError, KeyError):
    pass


class TrainingAborted(TTSWoTError, RuntimeError):
    """Raised when the loss becomes non-finite."""

    def __init__(self, iteration, report):
        super().__init__(f"non-finite loss at iteration {iteration}: {report}")
        self.iteration = iteration
        self.report = report
