"""Prompt construction, byte-compatible with the client engine's rendering.

The engine that calls this service renders conditioning prompts as::

    <C{id}> {sentence}      (one line per retained sentence, original ids)
    <blank line>
    {query}
    <blank line>
    {history}

and scores the target as the continuation of that string. This module must
reproduce those bytes exactly — the contract is pinned by the golden
fixtures under the client repo's tests/fixtures/, which our test suite
replays. Any change here is a protocol break, not a refactor.
"""

from __future__ import annotations

from typing import Iterable, Mapping


def render_sentences(sentences: Iterable[Mapping]) -> str:
    """Tagged sentence block; sentences sorted by id, ids never renumbered."""
    ordered = sorted(sentences, key=lambda s: s["id"])
    return "\n".join(f"<C{s['id']}> {s['text']}" for s in ordered)


def build_prompt(sentences: Iterable[Mapping], query: str, history: str) -> str:
    return f"{render_sentences(sentences)}\n\n{query}\n\n{history}"
