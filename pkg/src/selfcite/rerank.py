"""Best-of-N citation reranking.

For each statement, take the original citation plus N sampled candidate
citation strings, drop candidates whose cited text exceeds the token cap
(single-sentence citations are exempt however long), deduplicate on the
resolved cited-id set, score the survivors, and keep the argmax. The
original citation is always candidate 0, so with the default reward the
reranker never selects something it scores below the original; if nothing
is scorable the original is returned unchanged.

Statements are processed in order because each one's conditioning history
is the serialized prefix of ORIGINAL statements and citations (candidate
strings are sampled as continuations of that prefix, and rewards condition
on the same view).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import requests

from .citations import (
    CitationSequence,
    Statement,
    StructuredResponse,
    parse_citation_string,
    resolve_cited_sentences,
    serialize_citation_string,
    serialize_response,
)
from .errors import AllScoringFailed, BackendUnavailable, MalformedResponse, ScorerError
from .rewards import RewardBreakdown, TokenCounter, count_tokens, default_token_counter, reward
from .scoring import Scorer, ScoreRequest, build_scoring_prompt
from .segmenter import SegmentedContext

logger = logging.getLogger(__name__)

SELECTORS = ("selfcite", "lm_logprob", "max_length", "prob_drop_only", "prob_hold_only")
_REWARD_SELECTORS = ("selfcite", "prob_drop_only", "prob_hold_only")


@dataclass
class Candidate:
    """Audit record for one candidate citation of one statement."""

    index: int
    raw: str
    seq: CitationSequence | None
    valid: bool = True
    invalid_reason: str = "none"   # none | over_length | malformed | duplicate
    duplicate_of: int | None = None
    score: float | None = None
    reward: RewardBreakdown | None = None
    error: str | None = None

    def as_dict(self) -> dict:
        return {
            "index": self.index,
            "raw": self.raw,
            "spans": self.seq.pairs if self.seq is not None else None,
            "valid": self.valid,
            "invalid_reason": self.invalid_reason,
            "duplicate_of": self.duplicate_of,
            "score": self.score,
            "reward": self.reward.as_dict() if self.reward is not None else None,
            "error": self.error,
        }


@dataclass(frozen=True)
class RerankConfig:
    n: int = 10
    l_max_tokens: int = 384
    dedup: bool = True
    tie_break: str = "first_seen"
    selector: str = "selfcite"
    scoring_workers: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.l_max_tokens < 1:
            raise ValueError("l_max_tokens must be >= 1")
        if self.tie_break != "first_seen":
            raise ValueError(f"unknown tie_break {self.tie_break!r}")
        if self.selector not in SELECTORS:
            raise ValueError(f"unknown selector {self.selector!r}")
        if self.scoring_workers < 1:
            raise ValueError("scoring_workers must be >= 1")


@dataclass
class RerankResult:
    response: StructuredResponse
    audits: list[list[Candidate]] = field(default_factory=list)


class CandidateSource(Protocol):
    """Supplies sampled citation strings for one statement of one document."""

    def candidates(self, doc_id: str, statement_index: int, *,
                   ctx: SegmentedContext, query: str, history: str,
                   statement: str) -> Sequence[str]: ...


class StaticCandidateSource:
    """Pre-materialized candidates: one list of strings per statement."""

    def __init__(self, per_statement: Sequence[Sequence[str]] |
                 dict[str, Sequence[Sequence[str]]]):
        self._data = per_statement

    @classmethod
    def from_jsonl(cls, path) -> "StaticCandidateSource":
        """Load {"doc_id", "candidates": [[str, ...], ...]} records."""
        from .jsonl import read_jsonl
        table = {str(r["doc_id"]): r["candidates"] for r in read_jsonl(path)}
        return cls(table)

    def candidates(self, doc_id, statement_index, *, ctx, query, history, statement):
        if isinstance(self._data, dict):
            table = self._data.get(doc_id, [])
        else:
            table = self._data
        if statement_index >= len(table):
            return []
        return list(table[statement_index])


class HttpCandidateSource:
    """Live sampling from a completions-style generation endpoint.

    Sends the rendered context + query + history + the open statement block
    ending in ``<cite>`` and lets the model continue up to ``</cite>``.
    Defaults follow the diversity-oriented sampling setup (top_p=0.9,
    temperature=1.2).
    """

    def __init__(self, endpoint: str, *, n: int = 10, top_p: float = 0.9,
                 temperature: float = 1.2, max_tokens: int = 64,
                 timeout: float = 120.0):
        self.endpoint = endpoint
        self.n = n
        self.top_p = top_p
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.timeout = timeout

    def candidates(self, doc_id, statement_index, *, ctx, query, history, statement):
        prompt = build_scoring_prompt(ctx, ctx.all_ids(), query, history)
        joiner = "\n" if history else ""
        prompt = f"{prompt}{joiner}<statement>{statement}<cite>"
        payload = {
            "prompt": prompt,
            "n": self.n,
            "top_p": self.top_p,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "stop": ["</cite>"],
        }
        try:
            resp = requests.post(self.endpoint, json=payload, timeout=self.timeout)
            resp.raise_for_status()
            data = resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise BackendUnavailable(f"candidate sampling failed: {exc}")
        return [choice.get("text", "") for choice in data.get("choices", [])]


def parse_candidate_string(raw: str) -> CitationSequence:
    """Parse a sampled candidate, tolerating surrounding <cite> tags."""
    s = raw.strip()
    if s.startswith("<cite>"):
        s = s[len("<cite>"):]
    if s.endswith("</cite>"):
        s = s[: -len("</cite>")]
    return parse_citation_string(s)


def filter_candidate(cand: Candidate, ctx: SegmentedContext, cfg: RerankConfig, *,
                     token_counter: TokenCounter = default_token_counter) -> Candidate:
    """Apply the length cap: cited text within l_max_tokens, or one sentence.

    A candidate resolving to exactly one sentence is valid regardless of
    that sentence's length; an empty citation is trivially within the cap.
    """
    if not cand.valid or cand.seq is None:
        return cand
    cited = resolve_cited_sentences(cand.seq, ctx)
    if len(cited) == 1:
        return cand
    tokens = count_tokens(cited, ctx, counter=token_counter)
    if tokens > cfg.l_max_tokens:
        cand.valid = False
        cand.invalid_reason = "over_length"
    return cand


def dedup_candidates(cands: list[Candidate], ctx: SegmentedContext) -> list[Candidate]:
    """Mark repeat candidates (same resolved cited-id set), keeping first-seen.

    Comparison is on the resolved SET, not the raw string: "[1-2]" and
    "[1-1][2-2]" are the same candidate. Marked duplicates stay in the audit
    list but are excluded from scoring. Idempotent.
    """
    seen: dict[frozenset[int], int] = {}
    for cand in cands:
        if cand.seq is None or not cand.valid:
            continue
        key = frozenset(resolve_cited_sentences(cand.seq, ctx))
        if key in seen:
            cand.valid = False
            cand.invalid_reason = "duplicate"
            cand.duplicate_of = seen[key]
        else:
            seen[key] = cand.index
    return cands


def _score_candidate(scorer: Scorer, ctx, query, history, statement,
                     cand: Candidate, cfg: RerankConfig,
                     logp_full: float | None) -> Candidate:
    cited = resolve_cited_sentences(cand.seq, ctx)
    try:
        if cfg.selector in _REWARD_SELECTORS:
            breakdown = reward(scorer, ctx, query, history, statement, cited,
                               logp_full=logp_full)
            cand.reward = breakdown
            cand.score = {
                "selfcite": breakdown.reward,
                "prob_drop_only": breakdown.prob_drop,
                "prob_hold_only": breakdown.prob_hold,
            }[cfg.selector]
        elif cfg.selector == "lm_logprob":
            joiner = "\n" if history else ""
            cite_history = f"{history}{joiner}<statement>{statement}"
            cite_target = f"<cite>{serialize_citation_string(cand.seq)}</cite>"
            cand.score = scorer.score(ScoreRequest(
                retained_ids=ctx.all_ids(), ctx=ctx, query=query,
                history=cite_history, target=cite_target,
            ))
        elif cfg.selector == "max_length":
            cand.score = float(len(cited))
    except ScorerError as exc:
        cand.error = f"{type(exc).__name__}: {exc}"
    return cand


def rerank_statement(scorer: Scorer, ctx: SegmentedContext, query: str,
                     history: str, statement: str,
                     original: CitationSequence,
                     sampled: Iterable[str | CitationSequence],
                     cfg: RerankConfig, *,
                     token_counter: TokenCounter = default_token_counter,
                     logp_full: float | None = None,
                     ) -> tuple[CitationSequence, list[Candidate]]:
    """Pick the best citation for one statement.

    Returns the winning sequence plus the full audit trail. Falls back to
    ``original`` when no candidate survives filtering; raises
    AllScoringFailed only when scorable candidates existed and every scoring
    call errored.
    """
    cands: list[Candidate] = [
        Candidate(index=0, raw=serialize_citation_string(original), seq=original)
    ]
    for raw in sampled:
        idx = len(cands)
        if isinstance(raw, CitationSequence):
            cands.append(Candidate(index=idx, raw=serialize_citation_string(raw), seq=raw))
            continue
        try:
            seq = parse_candidate_string(raw)
        except MalformedResponse as exc:
            cands.append(Candidate(index=idx, raw=raw, seq=None, valid=False,
                                   invalid_reason="malformed", error=str(exc)))
            continue
        cands.append(Candidate(index=idx, raw=raw, seq=seq))

    if cfg.dedup:
        dedup_candidates(cands, ctx)
    for cand in cands:
        filter_candidate(cand, ctx, cfg, token_counter=token_counter)

    scorable = [c for c in cands if c.valid]
    if not scorable:
        return original, cands

    if cfg.selector in _REWARD_SELECTORS and logp_full is None:
        try:
            logp_full = scorer.score(ScoreRequest(
                retained_ids=ctx.all_ids(), ctx=ctx, query=query,
                history=history, target=statement,
            ))
        except ScorerError as exc:
            # every candidate evaluation needs this term, so all of them fail
            for cand in scorable:
                cand.error = f"{type(exc).__name__}: {exc}"
            raise AllScoringFailed(
                f"shared full-context scoring failed for statement "
                f"{statement[:60]!r}: {exc}")

    if cfg.scoring_workers > 1 and len(scorable) > 1:
        with ThreadPoolExecutor(max_workers=cfg.scoring_workers) as pool:
            list(pool.map(
                lambda c: _score_candidate(scorer, ctx, query, history,
                                           statement, c, cfg, logp_full),
                scorable,
            ))
    else:
        for cand in scorable:
            _score_candidate(scorer, ctx, query, history, statement, cand, cfg, logp_full)

    scored = [c for c in scorable if c.error is None and c.score is not None]
    if not scored:
        raise AllScoringFailed(
            f"all {len(scorable)} candidate evaluations failed for statement "
            f"{statement[:60]!r}"
        )
    best = scored[0]
    for cand in scored[1:]:
        if cand.score > best.score:   # strict: ties keep first-seen
            best = cand
    return best.seq, cands


def rerank_response(scorer: Scorer, ctx: SegmentedContext, query: str,
                    resp: StructuredResponse,
                    candidate_source: CandidateSource,
                    cfg: RerankConfig, *, doc_id: str = "",
                    token_counter: TokenCounter = default_token_counter,
                    ) -> RerankResult:
    """Replace each statement's citation with its best-of-N winner.

    Statement texts are preserved byte-for-byte; only citations change. The
    history fed to scoring for statement i is the canonical serialization of
    the ORIGINAL statements 1..i-1 with their original citations.
    """
    new_statements: list[Statement] = []
    audits: list[list[Candidate]] = []
    for i, st in enumerate(resp.statements):
        history = serialize_response(StructuredResponse(resp.statements[:i]))
        raws = candidate_source.candidates(
            doc_id, i, ctx=ctx, query=query, history=history, statement=st.text)
        best, audit = rerank_statement(
            scorer, ctx, query, history, st.text, st.citation, raws, cfg,
            token_counter=token_counter)
        new_statements.append(Statement(st.text, best))
        audits.append(audit)
    return RerankResult(StructuredResponse(tuple(new_statements)), audits)
