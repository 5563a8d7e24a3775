"""Context-ablation rewards for (statement, citation) pairs.

Three conditioning variants of the same statement probability drive
everything:

* full:    log p(r | C)           — all sentences retained
* without: log p(r | C \\ E)      — cited sentences removed
* only:    log p(r | E)           — only cited sentences retained

prob_drop = full - without  (how necessary the cited sentences are)
prob_hold = only - full     (how sufficient they are on their own)
reward    = only - without  (= prob_drop + prob_hold; the full term cancels)

Both components may be negative — an irrelevant or distracting citation can
make the isolated context WORSE than the full one — and are never clamped.

The full-context term depends only on the statement, so callers evaluating
many candidate citations for one statement compute it once and pass it in
(2N+1 scorer calls instead of 3N).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

from .scoring import Scorer, ScoreRequest
from .segmenter import SegmentedContext, is_cjk_char

TokenCounter = Callable[[str], int]


def default_token_counter(text: str) -> int:
    """Approximate token count: whitespace-split words, CJK chars counted singly.

    Within each whitespace-delimited chunk every CJK character is one token
    and every maximal run of non-CJK characters is one token. Real runs
    should plug in the scoring backend's tokenizer; length caps are
    configuration, not universal constants.
    """
    count = 0
    for chunk in text.split():
        in_run = False
        for ch in chunk:
            if is_cjk_char(ch):
                if in_run:
                    count += 1
                    in_run = False
                count += 1
            else:
                in_run = True
        if in_run:
            count += 1
    return count


def count_tokens(text_or_ids: str | Iterable[int],
                 ctx: SegmentedContext | None = None, *,
                 counter: TokenCounter = default_token_counter) -> int:
    """Token count of a text, or of cited sentences given ids.

    For an id collection the result is the SUM of per-sentence counts (the
    sentences are never joined first).
    """
    if isinstance(text_or_ids, str):
        return counter(text_or_ids)
    if ctx is None:
        raise ValueError("ctx is required when counting tokens of sentence ids")
    return sum(counter(ctx.sentences[i].text) for i in text_or_ids)


@dataclass(frozen=True)
class RewardBreakdown:
    prob_drop: float
    prob_hold: float
    reward: float
    logp_full: float
    logp_without: float
    logp_only: float

    @classmethod
    def from_logps(cls, logp_full: float, logp_without: float,
                   logp_only: float) -> "RewardBreakdown":
        return cls(
            prob_drop=logp_full - logp_without,
            prob_hold=logp_only - logp_full,
            reward=logp_only - logp_without,
            logp_full=logp_full,
            logp_without=logp_without,
            logp_only=logp_only,
        )

    def as_dict(self) -> dict:
        return {
            "prob_drop": self.prob_drop,
            "prob_hold": self.prob_hold,
            "reward": self.reward,
            "logp_full": self.logp_full,
            "logp_without": self.logp_without,
            "logp_only": self.logp_only,
        }


def _score(scorer: Scorer, ctx, query, history, statement, retained) -> float:
    return scorer.score(ScoreRequest(
        retained_ids=frozenset(retained), ctx=ctx, query=query,
        history=history, target=statement,
    ))


def reward(scorer: Scorer, ctx: SegmentedContext, query: str, history: str,
           statement: str, cited: Iterable[int], *,
           logp_full: float | None = None) -> RewardBreakdown:
    """Full breakdown for one (statement, cited-id-set) pair.

    Pass ``logp_full`` to reuse a previously computed full-context score for
    the same statement; the cached value is exact, so results are identical
    to a fresh three-call evaluation.
    """
    cited_set = frozenset(cited)
    all_ids = ctx.all_ids()
    if not cited_set <= all_ids:
        raise ValueError("cited ids must lie within the context")
    if logp_full is None:
        logp_full = _score(scorer, ctx, query, history, statement, all_ids)
    logp_without = _score(scorer, ctx, query, history, statement, all_ids - cited_set)
    logp_only = _score(scorer, ctx, query, history, statement, cited_set)
    return RewardBreakdown.from_logps(logp_full, logp_without, logp_only)


def prob_drop(scorer: Scorer, ctx: SegmentedContext, query: str, history: str,
              statement: str, cited: Iterable[int]) -> float:
    """log p(r | C) - log p(r | C \\ E)."""
    cited_set = frozenset(cited)
    all_ids = ctx.all_ids()
    full = _score(scorer, ctx, query, history, statement, all_ids)
    without = _score(scorer, ctx, query, history, statement, all_ids - cited_set)
    return full - without


def prob_hold(scorer: Scorer, ctx: SegmentedContext, query: str, history: str,
              statement: str, cited: Iterable[int]) -> float:
    """log p(r | E) - log p(r | C)."""
    cited_set = frozenset(cited)
    only = _score(scorer, ctx, query, history, statement, cited_set)
    full = _score(scorer, ctx, query, history, statement, ctx.all_ids())
    return only - full
