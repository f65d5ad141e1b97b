"""Exception types shared across the toolkit.

Each class carries a short ``category`` used by the CLI's one-line error report.
"""


class FgsslError(Exception):
    category = "error"


class InvalidInputError(FgsslError, ValueError):
    category = "invalid-input"


class ConfigError(FgsslError, ValueError):
    category = "config"


class DataError(FgsslError):
    category = "data"


class TrainingDiverged(FgsslError, FloatingPointError):
    """Raised when a training step produces a non-finite loss.

    ``snapshot`` holds whatever diagnostics the step had collected.
    """

    category = "training-diverged"

    def __init__(self, message: str, snapshot: dict | None = None):
        super().__init__(message)
        self.snapshot = snapshot or {}
