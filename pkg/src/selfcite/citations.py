"""Parse and serialize the tagged statement/citation response format.

A complete response is a sequence of blocks::

    <statement>{text}<cite>[a-b][c-d]...</cite></statement>

Each ``[a-b]`` is an inclusive sentence-id span; ``[5-5]`` cites the single
sentence 5; ``<cite></cite>`` is an empty citation. Spans are kept exactly
as written (duplicates and overlaps included) — deduplication happens only
through set-semantics resolution against a context, because downstream
rewards depend only on the cited-id set while raw candidate strings must
stay distinguishable.

Parsing is lenient by default: non-whitespace text outside statement blocks
becomes a citation-free statement. Strict mode rejects it with StrayText.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .errors import MalformedSpan, MalformedTag, StrayText
from .segmenter import SegmentedContext

logger = logging.getLogger(__name__)

_STATEMENT_OPEN = "<statement>"
_STATEMENT_CLOSE = "</statement>"
_CITE_OPEN = "<cite>"
_CITE_CLOSE = "</cite>"
_SPAN_RE = re.compile(r"(\d+)-(\d+)")


@dataclass(frozen=True)
class CitationSpan:
    """Inclusive sentence-id interval [start_id, end_id]."""

    start_id: int
    end_id: int

    def __post_init__(self):
        if not 0 <= self.start_id <= self.end_id:
            raise ValueError(f"invalid span ({self.start_id}, {self.end_id})")

    @property
    def width(self) -> int:
        return self.end_id - self.start_id + 1


@dataclass(frozen=True)
class CitationSequence:
    """Ordered citation spans, exactly as authored. May be empty."""

    spans: tuple[CitationSpan, ...] = ()

    @classmethod
    def from_pairs(cls, pairs) -> "CitationSequence":
        return cls(tuple(CitationSpan(int(a), int(b)) for a, b in pairs))

    @property
    def pairs(self) -> list[list[int]]:
        return [[s.start_id, s.end_id] for s in self.spans]

    def is_empty(self) -> bool:
        return not self.spans


@dataclass(frozen=True)
class Statement:
    text: str
    citation: CitationSequence

    def __post_init__(self):
        if not self.text:
            raise ValueError("statement text must be non-empty")


@dataclass(frozen=True)
class StructuredResponse:
    statements: tuple[Statement, ...] = ()


def parse_citation_string(body: str) -> CitationSequence:
    """Parse a cite body like "[302-303][306-306]" into a CitationSequence.

    An empty (or whitespace-only) body is an empty sequence. Anything else
    must be a run of ``[a-b]`` groups with no separators.
    """
    s = body.strip()
    if not s:
        return CitationSequence(())
    if not (s.startswith("[") and s.endswith("]")):
        raise MalformedSpan(f"citation string must be [a-b] groups, got {body!r}")
    spans = []
    for part in s[1:-1].split("]["):
        m = _SPAN_RE.fullmatch(part)
        if m is None:
            raise MalformedSpan(f"bad span {part!r} in {body!r}")
        a, b = int(m.group(1)), int(m.group(2))
        if a > b:
            raise MalformedSpan(f"span start {a} exceeds end {b}")
        spans.append(CitationSpan(a, b))
    return CitationSequence(tuple(spans))


def serialize_citation_string(seq: CitationSequence) -> str:
    return "".join(f"[{s.start_id}-{s.end_id}]" for s in seq.spans)


def parse_response(raw: str, *, strict: bool = False) -> StructuredResponse:
    """Parse a tagged response into statements with citation sequences.

    Raises:
        MalformedTag: unbalanced or misordered tags, empty statement text.
        MalformedSpan: unparseable citation span.
        StrayText: non-whitespace outside statement blocks (strict only).
    """
    statements: list[Statement] = []
    pos = 0
    n = len(raw)
    while pos <= n:
        open_idx = raw.find(_STATEMENT_OPEN, pos)
        outside = raw[pos:open_idx] if open_idx != -1 else raw[pos:]
        if outside.strip():
            if strict:
                raise StrayText(f"text outside statement blocks: {outside.strip()[:80]!r}")
            statements.append(Statement(outside.strip(), CitationSequence(())))
        if open_idx == -1:
            break
        text_start = open_idx + len(_STATEMENT_OPEN)
        cite_idx = raw.find(_CITE_OPEN, text_start)
        nested = raw.find(_STATEMENT_OPEN, text_start)
        early_close = raw.find(_STATEMENT_CLOSE, text_start)
        if cite_idx == -1:
            raise MalformedTag("statement block without <cite>")
        if nested != -1 and nested < cite_idx:
            raise MalformedTag("nested <statement> before <cite>")
        if early_close != -1 and early_close < cite_idx:
            raise MalformedTag("</statement> before <cite>")
        text = raw[text_start:cite_idx]
        if not text.strip():
            raise MalformedTag("empty statement text")
        body_start = cite_idx + len(_CITE_OPEN)
        cite_close = raw.find(_CITE_CLOSE, body_start)
        if cite_close == -1:
            raise MalformedTag("unclosed <cite>")
        body = raw[body_start:cite_close]
        after = cite_close + len(_CITE_CLOSE)
        stmt_close = raw.find(_STATEMENT_CLOSE, after)
        if stmt_close == -1:
            raise MalformedTag("unclosed <statement>")
        if raw[after:stmt_close].strip():
            raise MalformedTag("unexpected text between </cite> and </statement>")
        statements.append(Statement(text, parse_citation_string(body)))
        pos = stmt_close + len(_STATEMENT_CLOSE)
    return StructuredResponse(tuple(statements))


def serialize_response(resp: StructuredResponse) -> str:
    """Canonical emission: one block per statement, joined by newlines.

    Span order and statement text are preserved byte-for-byte, so
    ``parse_response(serialize_response(r)) == r``.
    """
    return "\n".join(
        f"{_STATEMENT_OPEN}{st.text}{_CITE_OPEN}"
        f"{serialize_citation_string(st.citation)}{_CITE_CLOSE}{_STATEMENT_CLOSE}"
        for st in resp.statements
    )


def resolve_cited_sentences(seq: CitationSequence, ctx: SegmentedContext) -> set[int]:
    """The set of in-range sentence ids covered by the sequence's spans.

    Out-of-range portions are clamped away and logged; clamping (not
    erroring) is the contract because model output routinely cites ids that
    fall outside an ablated or truncated context.
    """
    size = len(ctx.sentences)
    resolved: set[int] = set()
    for span in seq.spans:
        lo = max(span.start_id, 0)
        hi = min(span.end_id, size - 1)
        if lo > hi:
            logger.warning("span [%d-%d] entirely outside context of size %d; dropped",
                           span.start_id, span.end_id, size)
            continue
        if lo != span.start_id or hi != span.end_id:
            logger.warning("span [%d-%d] clamped to [%d-%d] for context of size %d",
                           span.start_id, span.end_id, lo, hi, size)
        resolved.update(range(lo, hi + 1))
    return resolved


def coverage(seq: CitationSequence, ctx: SegmentedContext) -> int:
    """Number of distinct in-range sentences cited (set semantics)."""
    return len(resolve_cited_sentences(seq, ctx))


def response_to_record(doc_id: str, query: str, resp: StructuredResponse) -> dict:
    return {
        "doc_id": doc_id,
        "query": query,
        "statements": [
            {"text": st.text, "spans": st.citation.pairs} for st in resp.statements
        ],
    }


def response_from_record(record: dict) -> StructuredResponse:
    statements = tuple(
        Statement(s["text"], CitationSequence.from_pairs(s.get("spans", [])))
        for s in record["statements"]
    )
    return StructuredResponse(statements)
