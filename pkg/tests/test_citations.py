"""Response-format parsing, serialization, and span resolution."""

from __future__ import annotations

import logging
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfcite import (
    CitationSequence,
    CitationSpan,
    SegmentedContext,
    Statement,
    StructuredResponse,
    coverage,
    parse_citation_string,
    parse_response,
    resolve_cited_sentences,
    serialize_citation_string,
    serialize_response,
)
from selfcite.errors import MalformedResponse, MalformedSpan, MalformedTag, StrayText
from tests.conftest import make_context, seq_of


def random_response(rng: random.Random, max_statements: int = 5) -> StructuredResponse:
    statements = []
    for _ in range(rng.randint(1, max_statements)):
        text = " ".join(rng.choices(["fact", "claim", "detail", "值", "note"],
                                    k=rng.randint(1, 6)))
        spans = []
        for _ in range(rng.randint(0, 4)):
            a = rng.randint(0, 400)
            spans.append((a, a + rng.randint(0, 5)))
        statements.append((text, spans))
    return StructuredResponse(tuple(
        Statement(t, CitationSequence.from_pairs(p)) for t, p in statements))


class TestParse:
    def test_table_style_block(self):
        resp = parse_response("<statement>X<cite>[302-303][306-306]</cite></statement>")
        assert len(resp.statements) == 1
        assert resp.statements[0].citation.pairs == [[302, 303], [306, 306]]

    def test_empty_cite(self):
        resp = parse_response("<statement>X<cite></cite></statement>")
        assert resp.statements[0].citation.is_empty()

    def test_multiple_blocks_with_whitespace(self):
        raw = ("<statement>A<cite>[1-1]</cite></statement>\n"
               "<statement>B<cite>[2-3]</cite></statement>")
        resp = parse_response(raw)
        assert [s.text for s in resp.statements] == ["A", "B"]

    def test_lenient_preamble_becomes_statement(self):
        resp = parse_response("Intro text.\n<statement>A<cite>[1-1]</cite></statement>")
        assert resp.statements[0].text == "Intro text."
        assert resp.statements[0].citation.is_empty()
        assert resp.statements[1].text == "A"

    def test_strict_rejects_stray_text(self):
        with pytest.raises(StrayText):
            parse_response("junk<statement>A<cite></cite></statement>", strict=True)

    def test_whitespace_outside_blocks_ignored_in_strict(self):
        resp = parse_response("\n <statement>A<cite></cite></statement> \n", strict=True)
        assert len(resp.statements) == 1

    @pytest.mark.parametrize("raw", [
        "<statement>A<cite>[1-2]</cite>",                      # unclosed statement
        "<statement>A</statement>",                            # no cite
        "<statement>A<cite>[1-2]</statement>",                 # unclosed cite
        "<statement>A<statement>B<cite></cite></statement>",   # nested open
        "<statement><cite>[1-1]</cite></statement>",           # empty text
        "<statement>A<cite>[1-1]</cite>junk</statement>",      # junk before close
    ])
    def test_malformed_tags(self, raw):
        with pytest.raises(MalformedTag):
            parse_response(raw)

    @pytest.mark.parametrize("body", ["[5-2]", "[a-b]", "[1]", "1-2", "[1-2", "[1-2]x[3-4]"])
    def test_malformed_spans(self, body):
        with pytest.raises(MalformedSpan):
            parse_response(f"<statement>A<cite>{body}</cite></statement>")

    def test_span_invariant(self):
        with pytest.raises(ValueError):
            CitationSpan(5, 2)
        with pytest.raises(ValueError):
            CitationSpan(-1, 2)

    @settings(max_examples=300, deadline=None)
    @given(st.text(max_size=200))
    def test_never_panics_on_adversarial_input(self, raw):
        try:
            parse_response(raw)
        except MalformedResponse:
            pass


class TestRoundtrip:
    def test_serialize_empty_citation_form(self):
        resp = StructuredResponse((Statement("X", CitationSequence(())),))
        assert serialize_response(resp) == "<statement>X<cite></cite></statement>"

    def test_single_sentence_span_form(self):
        assert serialize_citation_string(seq_of((5, 5))) == "[5-5]"

    def test_span_order_preserved_not_sorted(self):
        s = "[306-306][302-303]"
        assert serialize_citation_string(parse_citation_string(s)) == s

    def test_generated_strings_roundtrip(self):
        rng = random.Random(7)
        for _ in range(1000):
            resp = random_response(rng)
            raw = serialize_response(resp)
            assert serialize_response(parse_response(raw)) == raw

    @settings(max_examples=200, deadline=None)
    @given(st.integers(min_value=0, max_value=10**6))
    def test_parse_serialize_identity_on_values(self, seed):
        resp = random_response(random.Random(seed))
        assert parse_response(serialize_response(resp)) == resp


class TestResolve:
    def test_table_spans(self):
        ctx = make_context(400)
        assert resolve_cited_sentences(seq_of((302, 303), (306, 306)), ctx) == {302, 303, 306}

    def test_single_sentence_context(self):
        ctx = make_context(1)
        assert resolve_cited_sentences(seq_of((0, 0)), ctx) == {0}

    def test_clamps_with_warning(self, caplog):
        ctx = make_context(400)
        with caplog.at_level(logging.WARNING, logger="selfcite.citations"):
            resolved = resolve_cited_sentences(seq_of((398, 405)), ctx)
        assert resolved == {398, 399}
        assert any("clamped" in r.message for r in caplog.records)

    def test_fully_out_of_range_dropped(self, caplog):
        ctx = make_context(10)
        with caplog.at_level(logging.WARNING, logger="selfcite.citations"):
            assert resolve_cited_sentences(seq_of((50, 60)), ctx) == set()
        assert any("dropped" in r.message for r in caplog.records)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), max_size=6),
           st.integers(min_value=1, max_value=20))
    def test_resolution_always_within_context(self, raw_pairs, size):
        pairs = [(min(a, b), max(a, b)) for a, b in raw_pairs]
        ctx = make_context(size)
        resolved = resolve_cited_sentences(CitationSequence.from_pairs(pairs), ctx)
        assert resolved <= set(range(size))
        assert coverage(CitationSequence.from_pairs(pairs), ctx) <= size


class TestCoverage:
    def test_table_spans(self):
        assert coverage(seq_of((302, 303), (306, 306)), make_context(400)) == 3

    def test_empty(self):
        assert coverage(CitationSequence(()), make_context(5)) == 0

    def test_overlapping_set_semantics(self):
        assert coverage(seq_of((1, 3), (2, 4)), make_context(10)) == 4
