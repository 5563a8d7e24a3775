"""Shared fixtures and synthetic-data builders."""

from __future__ import annotations

import random

import pytest

from selfcite import (
    CitationSequence,
    OracleScorer,
    SegmentedContext,
    Statement,
    StructuredResponse,
    SupportOracleSpec,
)


def make_context(n: int, words_per_sentence: int = 4) -> SegmentedContext:
    """n sentences of fixed token count (words_per_sentence each)."""
    texts = [
        " ".join([f"s{i}w{j}" for j in range(words_per_sentence - 1)] + ["end."])
        for i in range(n)
    ]
    return SegmentedContext.from_texts(texts)


def make_oracle(support_by_statement: dict[str, set[int]], alpha: float = 1.0) -> OracleScorer:
    spec = SupportOracleSpec(
        support_map={k: frozenset(v) for k, v in support_by_statement.items()},
        alpha=alpha,
    )
    return OracleScorer(spec)


def seq_of(*pairs) -> CitationSequence:
    return CitationSequence.from_pairs(pairs)


def response_of(*statements) -> StructuredResponse:
    """statements: (text, [(a, b), ...]) tuples."""
    return StructuredResponse(tuple(
        Statement(text, CitationSequence.from_pairs(pairs))
        for text, pairs in statements
    ))


@pytest.fixture
def ctx8() -> SegmentedContext:
    return make_context(8)


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    rows = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" in nodeid and getattr(rep, "when", "call") == "call":
                rows.append((nodeid.split("::")[-1], status == "passed"))
    if rows:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, ok in sorted(rows):
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
