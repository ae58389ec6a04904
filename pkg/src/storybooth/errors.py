"""Exception hierarchy shared by the planner, mask builders and harness."""

from __future__ import annotations


class StoryboothError(Exception):
    """Base class for all package errors."""


class UsageError(StoryboothError, ValueError):
    """Inputs are inconsistent with each other (shapes, frames, grids)."""


class PlanValidationError(StoryboothError, ValueError):
    """A storyboard plan violates one or more invariants.

    Attributes:
        violations: human-readable messages, one per violated invariant,
            each prefixed with the offending field path.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid plan")


class PlanParseError(StoryboothError, ValueError):
    """Text could not be decoded into a plan document."""

    def __init__(self, message, raw_text="", attempts=1):
        self.raw_text = raw_text
        self.attempts = attempts
        super().__init__(message)


class TransportError(StoryboothError, RuntimeError):
    """The chat-completion transport failed; safe to retry."""

    retriable = True

    def __init__(self, message, attempts=1):
        self.attempts = attempts
        super().__init__(message)


class CapacityError(StoryboothError, ValueError):
    """Requested layout cannot be tiled with valid boxes."""


class NumericError(StoryboothError, FloatingPointError):
    """A non-finite value appeared in an intermediate result.

    Attributes:
        stage: name of the computation stage that produced it.
    """

    def __init__(self, stage, message=""):
        self.stage = stage
        super().__init__(f"non-finite values at {stage}" + (f": {message}" if message else ""))
