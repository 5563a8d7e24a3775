"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, InputError (and
subclasses) -> 2, ScorerError -> 3.
"""

from __future__ import annotations


class SelfCiteError(Exception):
    """Base class for all package errors."""


class ConfigError(SelfCiteError):
    """Invalid or inconsistent pipeline configuration."""


class InputError(SelfCiteError):
    """Bad input data (files, records, documents)."""


class EmptyDocument(InputError):
    """Document is empty or whitespace-only."""


class MalformedResponse(InputError):
    """Base class for response-format parse failures."""


class MalformedTag(MalformedResponse):
    """Unbalanced or misordered statement/cite tags."""


class MalformedSpan(MalformedResponse):
    """Citation span is not of the form [a-b] with 0 <= a <= b."""


class StrayText(MalformedResponse):
    """Non-whitespace text outside statement blocks (strict mode only)."""


class ScorerError(SelfCiteError):
    """Base class for scoring-backend failures."""


class BackendUnavailable(ScorerError):
    """Backend unreachable or returned a server-side error. Retryable."""


class BackendTimeout(ScorerError):
    """Backend did not answer in time. Retryable."""


class InvalidRequest(ScorerError):
    """Request rejected by the backend or locally invalid. Not retryable."""


class UnknownStatement(InvalidRequest):
    """Oracle scorer has no support entry for the target statement."""


class AllScoringFailed(ScorerError):
    """Every reward evaluation for a statement's candidates errored."""


RETRYABLE_SCORER_ERRORS = (BackendUnavailable, BackendTimeout)


class BalancingInfeasible(SelfCiteError):
    """Not enough insertable sentence ids near the anchors to match coverage."""


class AnchorsExceedBudget(SelfCiteError):
    """The anchored sentences alone exceed the truncation token budget."""


class DidNotConverge(SelfCiteError):
    """Coordinate descent hit the iteration cap; carries the best iterate."""

    def __init__(self, message: str, model=None):
        super().__init__(message)
        self.model = model
