"""Preference-pair dataset construction.

A pair holds two responses with IDENTICAL statement texts: the reranked
response (chosen) and the original (rejected). Because reranking tends to
pick slightly longer citations, training directly on raw pairs teaches the
shortcut "cite more"; length balancing edits the rejected side until both
responses cite equally many sentences per statement, so the learnable
difference is WHERE to cite, not how much.

Also here: citation-span perturbation (for denoising-style pairs that
prefer the original response over a randomly shifted variant) and
farthest-first context truncation (drop the sentences with the greatest
sentence-index distance from any cited anchor until the context fits a
token budget).

All randomness is seeded and every edit is recorded, so a (record, seed)
pair reproduces byte-identical output.
"""

from __future__ import annotations

import hashlib
import logging
import random
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .citations import (
    CitationSequence,
    CitationSpan,
    Statement,
    StructuredResponse,
    coverage,
    parse_response,
    resolve_cited_sentences,
    serialize_response,
)
from .errors import (
    AllScoringFailed,
    AnchorsExceedBudget,
    BalancingInfeasible,
    InputError,
    UnknownStatement,
)
from .rerank import RerankConfig, RerankResult, StaticCandidateSource, rerank_response
from .rewards import TokenCounter, default_token_counter
from .scoring import Scorer
from .segmenter import SegmentedContext, SentenceUnit, context_from_record, segment

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EditRecord:
    statement_index: int
    action: str          # "insert" | "remove"
    span: tuple[int, int]

    def as_dict(self) -> dict:
        return {"statement": self.statement_index, "action": self.action,
                "span": list(self.span)}


@dataclass
class PreferencePair:
    doc_id: str
    query: str
    chosen: StructuredResponse
    rejected: StructuredResponse
    balancing_log: list[EditRecord] = field(default_factory=list)

    def __post_init__(self):
        ch = [s.text for s in self.chosen.statements]
        rj = [s.text for s in self.rejected.statements]
        if ch != rj:
            raise ValueError("chosen and rejected must share identical statement texts")


@dataclass(frozen=True)
class TruncationPlan:
    budget_tokens: int
    keep_anchors: frozenset[int]
    removed_ids: tuple[int, ...]


def _insertion_candidates(anchors: set[int], excluded: set[int], size: int,
                          window: tuple[int, int]) -> list[int]:
    lo, hi = window
    out = set()
    for a in anchors:
        for dist in range(lo, hi + 1):
            for j in (a - dist, a + dist):
                if 0 <= j < size and j not in excluded:
                    out.add(j)
    return sorted(out)


def balance_lengths(pair: PreferencePair, ctx: SegmentedContext,
                    window: tuple[int, int] = (5, 10),
                    rng_seed: int = 0) -> PreferencePair:
    """Edit the rejected response until per-statement coverage matches chosen.

    Under-coverage is fixed by inserting single-sentence spans whose id lies
    ``window`` sentence indices away from a pre-existing rejected citation
    (from the chosen citations when the rejected statement has none) and is
    not already cited. Over-coverage removes randomly chosen intervals until
    at or below target, then inserts back up to exact equality.

    Raises BalancingInfeasible when the window holds too few uncited
    sentences to reach the target; callers drop the pair and log.
    """
    rng = random.Random(rng_seed)
    size = len(ctx.sentences)
    edits: list[EditRecord] = list(pair.balancing_log)
    new_rejected: list[Statement] = []

    for i, (ch_st, rj_st) in enumerate(zip(pair.chosen.statements,
                                           pair.rejected.statements)):
        target = coverage(ch_st.citation, ctx)
        spans = list(rj_st.citation.spans)

        def cov() -> int:
            return coverage(CitationSequence(tuple(spans)), ctx)

        while cov() > target and spans:
            victim = rng.randrange(len(spans))
            removed = spans.pop(victim)
            edits.append(EditRecord(i, "remove", (removed.start_id, removed.end_id)))

        if cov() < target:
            pre_existing = resolve_cited_sentences(rj_st.citation, ctx)
            anchors = pre_existing or resolve_cited_sentences(ch_st.citation, ctx)
            excluded = set(pre_existing) | resolve_cited_sentences(
                CitationSequence(tuple(spans)), ctx)
            while cov() < target:
                options = _insertion_candidates(anchors, excluded, size, window)
                if not options:
                    raise BalancingInfeasible(
                        f"statement {i}: need coverage {target}, stuck at {cov()}; "
                        f"no uncited sentence within {window} of anchors")
                j = rng.choice(options)
                spans.append(CitationSpan(j, j))
                excluded.add(j)
                edits.append(EditRecord(i, "insert", (j, j)))

        new_rejected.append(Statement(rj_st.text, CitationSequence(tuple(spans))))

    balanced = PreferencePair(
        doc_id=pair.doc_id, query=pair.query, chosen=pair.chosen,
        rejected=StructuredResponse(tuple(new_rejected)), balancing_log=edits)
    for ch_st, rj_st in zip(balanced.chosen.statements, balanced.rejected.statements):
        assert coverage(ch_st.citation, ctx) == coverage(rj_st.citation, ctx)
    return balanced


def perturb_citations(resp: StructuredResponse, ctx: SegmentedContext,
                      shift_range: tuple[int, int] = (3, 10),
                      rng_seed: int = 0) -> StructuredResponse:
    """Shift every citation span by a random signed offset, clamped in range.

    Each span moves by |delta| drawn uniformly from ``shift_range`` with a
    uniform sign; the span keeps its width wherever the context boundary
    allows. Statement texts and the number of spans are unchanged; empty
    citations stay empty.
    """
    rng = random.Random(rng_seed)
    lo, hi = shift_range
    size = len(ctx.sentences)
    out: list[Statement] = []
    for st in resp.statements:
        spans = []
        for span in st.citation.spans:
            delta = rng.randint(lo, hi) * rng.choice((-1, 1))
            width = min(span.width, size)
            a = span.start_id + delta
            b = span.end_id + delta
            if a < 0:
                a, b = 0, width - 1
            elif b > size - 1:
                b = size - 1
                a = max(0, b - width + 1)
            spans.append(CitationSpan(a, b))
        out.append(Statement(st.text, CitationSequence(tuple(spans))))
    return StructuredResponse(tuple(out))


def plan_truncation(ctx: SegmentedContext, anchors: Iterable[int],
                    budget_tokens: int = 25600, *,
                    token_counter: TokenCounter = default_token_counter,
                    ) -> TruncationPlan:
    """Greedy farthest-first removal plan to fit the token budget.

    Repeatedly removes the non-anchor sentence with the greatest
    sentence-index distance to its nearest anchor (ties to the larger id)
    until the remaining sentences fit. Anchors are never removed; if the
    anchors alone exceed the budget the plan is impossible.
    """
    anchor_set = frozenset(anchors)
    size = len(ctx.sentences)
    if any(i < 0 or i >= size for i in anchor_set):
        raise ValueError("anchors out of range")
    tokens = [token_counter(u.text) for u in ctx.sentences]
    total = sum(tokens)
    if total <= budget_tokens:
        return TruncationPlan(budget_tokens, anchor_set, ())
    if sum(tokens[i] for i in anchor_set) > budget_tokens:
        raise AnchorsExceedBudget(
            f"anchored sentences alone hold {sum(tokens[i] for i in anchor_set)} "
            f"tokens > budget {budget_tokens}")

    def distance(j: int) -> float:
        if not anchor_set:
            return float("inf")
        return min(abs(j - a) for a in anchor_set)

    order = sorted((j for j in range(size) if j not in anchor_set),
                   key=lambda j: (-distance(j), -j))
    removed: list[int] = []
    for j in order:
        if total <= budget_tokens:
            break
        total -= tokens[j]
        removed.append(j)
    return TruncationPlan(budget_tokens, anchor_set, tuple(removed))


def apply_truncation(ctx: SegmentedContext, plan: TruncationPlan,
                     ) -> tuple[SegmentedContext, dict[int, int]]:
    """Materialize a plan: surviving sentences renumbered contiguously.

    Returns the truncated context plus the old-id -> new-id map. Byte spans
    still reference the ORIGINAL document.
    """
    removed = set(plan.removed_ids)
    survivors = [u for u in ctx.sentences if u.id not in removed]
    id_map = {u.id: new for new, u in enumerate(survivors)}
    units = tuple(
        SentenceUnit(id=id_map[u.id], text=u.text, start=u.start, end=u.end)
        for u in survivors
    )
    new_ctx = SegmentedContext(sentences=units, source_digest=ctx.source_digest)
    return new_ctx, id_map


def remap_response(resp: StructuredResponse, id_map: dict[int, int],
                   ) -> StructuredResponse:
    """Rewrite citation spans through an id map (post-truncation).

    Surviving ids inside a span are regrouped into maximal consecutive runs
    in the new numbering; ids that did not survive are dropped with a log
    record (they cannot be cited any more).
    """
    out: list[Statement] = []
    for st in resp.statements:
        new_spans: list[CitationSpan] = []
        for span in st.citation.spans:
            kept = sorted(id_map[i] for i in range(span.start_id, span.end_id + 1)
                          if i in id_map)
            if len(kept) < span.width:
                logger.warning("span [%d-%d] lost %d sentence(s) to truncation",
                               span.start_id, span.end_id, span.width - len(kept))
            run_start = None
            prev = None
            for j in kept:
                if run_start is None:
                    run_start = prev = j
                elif j == prev + 1:
                    prev = j
                else:
                    new_spans.append(CitationSpan(run_start, prev))
                    run_start = prev = j
            if run_start is not None:
                new_spans.append(CitationSpan(run_start, prev))
        out.append(Statement(st.text, CitationSequence(tuple(new_spans))))
    return StructuredResponse(tuple(out))


@dataclass(frozen=True)
class PrefBuildConfig:
    rerank: RerankConfig = field(default_factory=RerankConfig)
    window: tuple[int, int] = (5, 10)
    seed: int = 0
    budget_tokens: int = 25600
    drop_identical: bool = True


def record_seed(base_seed: int, doc_id: str) -> int:
    """Stable per-record seed so records are independent and order-free."""
    digest = hashlib.sha256(f"{base_seed}:{doc_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _context_of(record: dict) -> SegmentedContext:
    if "sentences" in record:
        return context_from_record(record)
    if "text" in record:
        return segment(record["text"])
    raise InputError(f"record {record.get('doc_id', '?')!r} has neither "
                     f"'sentences' nor 'text'")


def build_pref_dataset(records: Iterable[dict], scorer: Scorer,
                       cfg: PrefBuildConfig, *,
                       token_counter: TokenCounter = default_token_counter,
                       ) -> Iterator[tuple[PreferencePair, dict]]:
    """Stream preference pairs from corpus records.

    Each record needs doc_id, sentences|text, query, response (tagged
    string), and candidates (list of candidate-string lists, one per
    statement). Yields (pair, meta) tuples; per-record failures are logged
    and skipped, as are pairs whose citations ended up identical everywhere
    (no preference signal).
    """
    for record in records:
        doc_id = str(record.get("doc_id", ""))
        try:
            ctx = _context_of(record)
            original = parse_response(record["response"])
            source = StaticCandidateSource(record.get("candidates", []))
            result: RerankResult = rerank_response(
                scorer, ctx, record["query"], original, source, cfg.rerank,
                doc_id=doc_id, token_counter=token_counter)
            chosen = result.response

            if cfg.drop_identical and chosen == original:
                logger.info("doc %s: chosen citations identical to original; dropped",
                            doc_id)
                continue

            seed = record_seed(cfg.seed, doc_id)
            meta: dict = {"seed": seed}

            anchors = set()
            for resp in (chosen, original):
                for st in resp.statements:
                    anchors |= resolve_cited_sentences(st.citation, ctx)
            plan = plan_truncation(ctx, anchors, cfg.budget_tokens,
                                   token_counter=token_counter)
            rejected = original
            if plan.removed_ids:
                ctx, id_map = apply_truncation(ctx, plan)
                chosen = remap_response(chosen, id_map)
                rejected = remap_response(rejected, id_map)
                meta["truncated"] = len(plan.removed_ids)

            pair = PreferencePair(doc_id=doc_id, query=record["query"],
                                  chosen=chosen, rejected=rejected)
            pair = balance_lengths(pair, ctx, window=cfg.window, rng_seed=seed)
            meta["edits"] = [e.as_dict() for e in pair.balancing_log]
            yield pair, meta
        except (InputError, BalancingInfeasible, AnchorsExceedBudget,
                AllScoringFailed, UnknownStatement) as exc:
            logger.warning("doc %s skipped: %s", doc_id, exc)
            continue


def pair_to_record(pair: PreferencePair, meta: dict) -> dict:
    return {
        "doc_id": pair.doc_id,
        "query": pair.query,
        "chosen": serialize_response(pair.chosen),
        "rejected": serialize_response(pair.rejected),
        "meta": meta,
    }
