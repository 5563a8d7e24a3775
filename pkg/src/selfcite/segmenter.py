"""Sentence segmentation with stable integer identifiers.

Splits raw documents into ordered sentence units and renders them into the
tagged prompt form consumed by scoring backends. Unit ids are position
indices (0..n-1) and stay attached to their sentences even when the context
is later ablated down to a subset — downstream citation indices must keep
meaning after sentences are removed, so ids are never renumbered.

Splitting is rule-based and self-contained:

* latin mode: ``. ! ?`` terminate a sentence when followed by whitespace
  (or end of text), with an abbreviation guard for the trailing-period case
  (see ``ABBREVIATIONS``). Runs like ``...`` or ``?!`` terminate at the end
  of the run.
* cjk mode: ``。 ！ ？ ；`` terminate unconditionally; the latin rules stay
  active for mixed-script documents.
* both modes: a newline is a hard sentence boundary. Closing quotes and
  brackets directly after a terminal attach to the finished sentence.

The canonical normalized form of a segmented document is its sentence texts
joined by single newlines (see ``join_sentences``); re-segmenting that form
reproduces the same units.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

from .errors import EmptyDocument

logger = logging.getLogger(__name__)

_LATIN_TERMINALS = frozenset(".!?")
_CJK_TERMINALS = frozenset("。！？；")
_CLOSERS = frozenset("\"')]}»”’」』）】")

# Tokens whose trailing period does not end a sentence. Compared
# case-insensitively against the word preceding the period; single capital
# initials are deliberately absent ("A. B" splits).
ABBREVIATIONS = frozenset({
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "rev", "hon",
    "vs", "etc", "e.g", "i.e", "cf", "al", "fig", "eq", "ca", "approx",
    "inc", "ltd", "co", "corp", "dept", "est",
    "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept",
    "oct", "nov", "dec",
    "u.s", "u.k", "a.m", "p.m",
})

_CJK_BLOCKS = (
    (0x3000, 0x303F),    # CJK symbols and punctuation
    (0x3040, 0x30FF),    # hiragana, katakana
    (0x3400, 0x4DBF),    # CJK extension A
    (0x4E00, 0x9FFF),    # CJK unified ideographs
    (0xF900, 0xFAFF),    # CJK compatibility ideographs
    (0xFF00, 0xFFEF),    # fullwidth forms
)


def is_cjk_char(ch: str) -> bool:
    code = ord(ch)
    return any(lo <= code <= hi for lo, hi in _CJK_BLOCKS)


@dataclass(frozen=True)
class SentenceUnit:
    """One sentence with its position id and byte span in the source.

    ``start``/``end`` are byte offsets into the UTF-8 encoding of the source
    document; ``document.encode()[start:end].decode()`` equals ``text``.
    """

    id: int
    text: str
    start: int
    end: int

    def __post_init__(self):
        if self.id < 0:
            raise ValueError(f"sentence id must be >= 0, got {self.id}")
        if not self.text.strip():
            raise ValueError("sentence text must be non-empty")
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"bad byte span ({self.start}, {self.end})")

    @property
    def char_span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class SegmentedContext:
    """An ordered, id-stable view of a document's sentences."""

    sentences: tuple[SentenceUnit, ...]
    source_digest: str

    def __post_init__(self):
        if not self.sentences:
            raise ValueError("SegmentedContext must contain at least one sentence")
        for pos, unit in enumerate(self.sentences):
            if unit.id != pos:
                raise ValueError(f"sentence at position {pos} has id {unit.id}")
        spans = [(u.start, u.end) for u in self.sentences]
        for (_s0, e0), (s1, _e1) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ValueError("sentence spans overlap or are out of order")

    def __len__(self) -> int:
        return len(self.sentences)

    @property
    def size(self) -> int:
        return len(self.sentences)

    def all_ids(self) -> frozenset[int]:
        return frozenset(range(len(self.sentences)))

    def texts(self) -> list[str]:
        return [u.text for u in self.sentences]

    @classmethod
    def from_texts(cls, texts: list[str] | tuple[str, ...]) -> "SegmentedContext":
        """Build a context directly from sentence strings (tests, synthetic data).

        The implied source document is the texts joined by single newlines.
        """
        doc = "\n".join(texts)
        units = []
        byte_pos = 0
        for i, text in enumerate(texts):
            nbytes = len(text.encode("utf-8"))
            units.append(SentenceUnit(id=i, text=text, start=byte_pos, end=byte_pos + nbytes))
            byte_pos += nbytes + 1  # the joining "\n"
        return cls(sentences=tuple(units), source_digest=digest_text(doc))


def digest_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def detect_language(document: str) -> str:
    """Return "cjk" if the document contains any CJK character, else "latin"."""
    return "cjk" if any(is_cjk_char(ch) for ch in document) else "latin"


def _abbreviation_before(document: str, dot_idx: int) -> bool:
    j = dot_idx
    while j > 0 and (document[j - 1].isalnum() or document[j - 1] in ".'’-"):
        j -= 1
    token = document[j:dot_idx].lower().strip(".'’-")
    return token in ABBREVIATIONS


def _raw_char_spans(document: str, cjk: bool) -> list[tuple[int, int]]:
    """Candidate (start, end) char spans between boundaries, untrimmed."""
    spans: list[tuple[int, int]] = []
    n = len(document)
    start = 0
    i = 0
    while i < n:
        ch = document[i]
        if ch in "\r\n":
            spans.append((start, i))
            start = i + 1
            i += 1
            continue
        if cjk and ch in _CJK_TERMINALS:
            end = i + 1
            while end < n and document[end] in _CLOSERS:
                end += 1
            spans.append((start, end))
            start = end
            i = end
            continue
        if ch in _LATIN_TERMINALS:
            run_end = i + 1
            while run_end < n and document[run_end] in _LATIN_TERMINALS:
                run_end += 1
            end = run_end
            while end < n and document[end] in _CLOSERS:
                end += 1
            boundary = end >= n or document[end].isspace()
            if boundary and ch == "." and run_end == i + 1:
                boundary = not _abbreviation_before(document, i)
            if boundary:
                spans.append((start, end))
                start = end
                i = end
            else:
                i = run_end
            continue
        i += 1
    if start < n:
        spans.append((start, n))
    return spans


def segment(document: str, language_hint: str = "auto", *,
            max_sentence_chars: int = 2048) -> SegmentedContext:
    """Split a document into identified sentence units.

    Args:
        document: raw UTF-8 text.
        language_hint: "latin", "cjk", or "auto" (detect from content).
        max_sentence_chars: advisory length bound; sentences longer than this
            are kept intact (the splitter never breaks mid-sentence) and are
            reported at debug level.

    Raises:
        EmptyDocument: if the document is empty or whitespace-only.
    """
    if language_hint not in ("latin", "cjk", "auto"):
        raise ValueError(f"unknown language_hint {language_hint!r}")
    if not document.strip():
        raise EmptyDocument("document is empty or whitespace-only")
    if language_hint == "auto":
        language_hint = detect_language(document)

    units: list[SentenceUnit] = []
    char_pos = 0
    byte_pos = 0
    for raw_start, raw_end in _raw_char_spans(document, cjk=(language_hint == "cjk")):
        s, e = raw_start, raw_end
        while s < e and document[s].isspace():
            s += 1
        while e > s and document[e - 1].isspace():
            e -= 1
        if e <= s:
            continue
        byte_pos += len(document[char_pos:s].encode("utf-8"))
        byte_start = byte_pos
        text = document[s:e]
        byte_pos += len(text.encode("utf-8"))
        char_pos = e
        if len(text) > max_sentence_chars:
            logger.debug("sentence %d exceeds %d chars (%d); kept intact",
                         len(units), max_sentence_chars, len(text))
        units.append(SentenceUnit(id=len(units), text=text,
                                  start=byte_start, end=byte_pos))
    if not units:
        raise EmptyDocument("document contains no sentence content")
    return SegmentedContext(sentences=tuple(units), source_digest=digest_text(document))


def join_sentences(ctx: SegmentedContext) -> str:
    """Canonical normalized form: sentence texts joined by single newlines."""
    return "\n".join(u.text for u in ctx.sentences)


def render_prompt_context(ctx: SegmentedContext) -> str:
    """Render the full context in model-facing form.

    Each sentence is prefixed with its ``<C{id}>`` tag, one space separates
    the tag from the text, and sentences are joined by single newlines.
    """
    return render_prompt_subset(ctx, ctx.all_ids())


def render_prompt_subset(ctx: SegmentedContext, retained_ids) -> str:
    """Render only the retained sentences, keeping original order and tags.

    Ids are NOT renumbered: an ablated context shows gaps so that citation
    indices in the history keep pointing at the same sentences.
    """
    size = len(ctx.sentences)
    ids = sorted(set(retained_ids))
    if ids and (ids[0] < 0 or ids[-1] >= size):
        raise ValueError(f"retained ids out of range for |C|={size}")
    return "\n".join(f"<C{i}> {ctx.sentences[i].text}" for i in ids)


def context_to_record(doc_id: str, ctx: SegmentedContext) -> dict:
    return {
        "doc_id": doc_id,
        "sentences": [
            {"id": u.id, "text": u.text, "start": u.start, "end": u.end}
            for u in ctx.sentences
        ],
    }


def context_from_record(record: dict) -> SegmentedContext:
    """Rebuild a context from the JSONL record form ({"doc_id", "sentences"})."""
    sents = record["sentences"]
    if all("start" in s and "end" in s for s in sents):
        units = tuple(
            SentenceUnit(id=s["id"], text=s["text"], start=s["start"], end=s["end"])
            for s in sents
        )
        joined = "\n".join(u.text for u in units)
        return SegmentedContext(sentences=units, source_digest=digest_text(joined))
    return SegmentedContext.from_texts([s["text"] for s in sents])
