"""
Exception hierarchy for the tracker.
"""

from typing import Optional, Sequence


class TrackerError(Exception):
    """Base class for all tracker errors."""


class InvalidInputError(TrackerError, ValueError):
    """Input rejected: bad shapes, non-finite values, invalid specs or configs."""


class DegenerateAlignmentError(InvalidInputError):
    """Similarity fit on a rank-deficient point configuration."""

    def __init__(self, message: str, singular_values: Optional[Sequence[float]] = None):
        if singular_values is not None:
            message = f"{message} (singular values: {list(singular_values)})"
        super().__init__(message)
        self.singular_values = singular_values


class NonFiniteError(TrackerError, RuntimeError):
    """Non-finite activation or loss."""

    def __init__(self, message: str, clip_ids: Optional[Sequence[str]] = None):
        if clip_ids:
            message = f"{message} (clips: {', '.join(clip_ids)})"
        super().__init__(message)
        self.clip_ids = list(clip_ids or [])


class ContainerFormatError(TrackerError, ValueError):
    """Malformed tensor container or manifest."""
