"""Exceptions raised by imaginenet."""

from __future__ import annotations

from typing import Any


class ImagineError(Exception):
    """Base class for errors raised on purpose by this package."""


class ValidationError(ImagineError, ValueError):
    """Raised when an argument or a value violates a documented invariant."""


class ShapeMismatch(ValidationError):
    """Raised when operand shapes do not agree."""

    def __init__(self, op: str, expected: Any, actual: Any):
        self.op = op
        self.expected = expected
        self.actual = actual
        super().__init__(f"Shape mismatch in {op}: expected {expected}, got {actual}")


class LabelSpaceError(ValidationError):
    """Raised when a label or label-space definition is invalid."""

    def __init__(self, message: str, offending: Any = None):
        self.offending = offending
        if offending is not None:
            message = f"{message}: {offending}"
        super().__init__(message)


class MetricError(ValidationError):
    """Raised when a metric is undefined for the given table."""


class NumericError(ImagineError, ArithmeticError):
    """Raised when a kernel produces NaN or Inf."""

    def __init__(self, op: str):
        self.op = op
        super().__init__(f"Non-finite values produced by {op}")


class ConfigError(ImagineError):
    """Raised when a configuration file is missing, unparsable or invalid."""


class ArtifactMissing(ImagineError):
    """Raised when a dataset, checkpoint or results directory does not exist."""

    def __init__(self, path: Any, what: str = "artifact"):
        self.path = path
        self.what = what
        super().__init__(f"Missing {what}: {path}")


class FeatureFormatError(ImagineError):
    """Raised when stored bytes do not match the declared layout."""

    def __init__(self, expected: Any, actual: Any):
        self.expected = expected
        self.actual = actual
        super().__init__(f"Cannot decode {actual} as {expected}")


class TrainingDiverged(ImagineError):
    """Raised when a training loss becomes non-finite.

    The partial run record is kept on the exception so callers can persist it.
    """

    def __init__(self, epoch: int, record: Any = None):
        self.epoch = epoch
        self.record = record
        super().__init__(f"Training diverged at epoch {epoch}")
