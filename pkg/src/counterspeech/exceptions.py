"""Shared exception types."""


class ConfigurationError(ValueError):
    """Bad configuration value (unknown format, fraction out of range, ...)."""


class CorpusFormatError(ValueError):
    """Malformed input record; message names the offending line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LabelingError(ValueError):
    """Outcome label cannot be derived (e.g. missing author information)."""


class TrainingError(RuntimeError):
    """Classifier or policy training cannot proceed or diverged."""


class PredictionError(ValueError):
    """Inputs unsuitable for prediction (empty reply, unknown label, ...)."""


class TransportError(RuntimeError):
    """Backend unreachable or timed out; safe to retry."""

    retryable = True


class GatewayError(RuntimeError):
    """Backend responded but violated the generation contract."""
