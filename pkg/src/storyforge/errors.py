"""Exception types shared across the toolkit.

File-level I/O problems (missing or unreadable files) surface as the
builtin ``OSError`` family; everything domain-specific derives from
``StoryForgeError`` so callers can catch toolkit failures in one clause.
"""

from __future__ import annotations


class StoryForgeError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(StoryForgeError):
    """A record failed validation. Carries the 1-based line number when known."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class EmptyInput(StoryForgeError):
    """Candidate or every reference is empty after tokenization."""


class ProviderError(StoryForgeError):
    """A similarity provider misbehaved (transport error or out-of-range score)."""

    def __init__(self, message: str, pair: tuple[str, str] | None = None):
        self.pair = pair
        super().__init__(message)


class DegenerateSet(StoryForgeError):
    """Fewer than two candidates: no pairwise distances exist."""


class InsufficientData(StoryForgeError):
    """Too few items to compute the requested statistic."""


class DegenerateMarginals(StoryForgeError):
    """Chance agreement equals 1; the coefficient is undefined."""


class UnknownItem(StoryForgeError):
    """Referenced item or candidate is not part of the task set."""


class NarrativityMismatch(StoryForgeError):
    """Client-supplied narrativity disagrees with the server recomputation."""


class DuplicateAnnotation(StoryForgeError):
    """This (annotator, item, candidate) triple was already submitted."""


class InvalidSpan(StoryForgeError):
    """A stage span does not fit inside the annotated text."""


class UnknownCriterion(StoryForgeError):
    """Criterion name is not one the judge knows how to score."""


class ScoreParseError(StoryForgeError):
    """No in-scale integer could be extracted from the judge response."""

    def __init__(self, message: str, raw_response: str = ""):
        self.raw_response = raw_response
        super().__init__(message)


class BackendError(StoryForgeError):
    """Transport-level failure talking to a judge backend."""

    def __init__(self, message: str, raw_response: str = ""):
        self.raw_response = raw_response
        super().__init__(message)


class ScaleMismatch(StoryForgeError):
    """Verdict criterion or score does not fit the reward spec's scale."""


class GroupTooSmall(StoryForgeError):
    """Group-relative advantages need at least two completions."""


class MissingGeneration(StoryForgeError):
    """An evaluated split item has no generation to score."""


class InsufficientOverlap(StoryForgeError):
    """Fewer than two annotators share enough rated items for agreement."""


class ConfigError(StoryForgeError):
    """Run configuration is malformed or contains unknown keys."""
