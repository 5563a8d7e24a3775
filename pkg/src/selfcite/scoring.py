"""Scoring boundary: everything that asks a language model for log p(target | ...).

All reward math goes through the single ``Scorer.score`` contract so that
tests can run against deterministic oracles while production runs hit an
HTTP backend. A scorer must be deterministic for a fixed instance and
request, and safely shareable across threads.

The conditioning context for a request is the retained sentences rendered
with their ORIGINAL ``<C{id}>`` tags in original order (never renumbered),
followed by the query and the verbatim history of prior statements and
citation tags — even when those citations point at removed sentences.
"""

from __future__ import annotations

import json
import logging
import math
import threading
import time
from dataclasses import dataclass
from typing import Mapping, Protocol

import requests

from .errors import (
    BackendTimeout,
    BackendUnavailable,
    InvalidRequest,
    UnknownStatement,
)
from .segmenter import SegmentedContext, render_prompt_subset

logger = logging.getLogger(__name__)

LogProb = float

LOGPROB_PATH = "/v1/logprob"


@dataclass(frozen=True)
class ScoreRequest:
    """One log-probability query: p(target | retained context, query, history)."""

    retained_ids: frozenset[int]
    ctx: SegmentedContext
    query: str
    history: str
    target: str

    def __post_init__(self):
        object.__setattr__(self, "retained_ids", frozenset(self.retained_ids))
        if not self.target:
            raise InvalidRequest("target must be non-empty")
        size = len(self.ctx.sentences)
        if any(i < 0 or i >= size for i in self.retained_ids):
            raise InvalidRequest(f"retained ids out of range for |C|={size}")

    def sentences_payload(self) -> list[dict]:
        return [
            {"id": i, "text": self.ctx.sentences[i].text}
            for i in sorted(self.retained_ids)
        ]


def build_scoring_prompt(ctx: SegmentedContext, retained_ids, query: str,
                         history: str) -> str:
    """The exact conditioning string a backend scores the target against.

    Layout (fixed; scoring services must reproduce it byte-for-byte)::

        {tagged retained sentences, one per line}
        <blank line>
        {query}
        <blank line>
        {history}

    The target is the continuation scored after this prompt. With an empty
    retained set the context block is empty (query and history stand alone).
    """
    block = render_prompt_subset(ctx, retained_ids)
    return f"{block}\n\n{query}\n\n{history}"


class Scorer(Protocol):
    def score(self, req: ScoreRequest) -> float: ...


@dataclass(frozen=True)
class SupportOracleSpec:
    """Deterministic test double: each statement has a known support set.

    score = -alpha * |support \\ retained|, i.e. each missing support
    sentence costs alpha nats. Perfect retention scores 0.
    """

    support_map: Mapping[str, frozenset[int]]
    alpha: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")

    @classmethod
    def from_file(cls, path) -> "SupportOracleSpec":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        support = {k: frozenset(v) for k, v in data["support_map"].items()}
        return cls(support_map=support, alpha=float(data.get("alpha", 1.0)))


class OracleScorer:
    """Scorer backed by a SupportOracleSpec."""

    def __init__(self, spec: SupportOracleSpec):
        self.spec = spec

    def score(self, req: ScoreRequest) -> float:
        support = self.spec.support_map.get(req.target)
        if support is None:
            raise UnknownStatement(f"no support entry for target {req.target[:60]!r}")
        return -self.spec.alpha * len(frozenset(support) - req.retained_ids)


class WeightedSupportScorer:
    """Graded oracle: per-sentence relevance weights instead of a hard set.

    score = -sum of weights of relevant sentences MISSING from the retained
    set; a full context scores 0. Lets tests model partially-relevant
    sentences (small weights) next to true support (large weights), which is
    needed to reproduce strict reward orderings between candidates that
    capture the same hard-support subset.
    """

    def __init__(self, weight_map: Mapping[str, Mapping[int, float]]):
        self.weight_map = {k: dict(v) for k, v in weight_map.items()}

    def score(self, req: ScoreRequest) -> float:
        weights = self.weight_map.get(req.target)
        if weights is None:
            raise UnknownStatement(f"no weight entry for target {req.target[:60]!r}")
        return -sum(w for i, w in weights.items() if i not in req.retained_ids)


def oracle_scorer(spec: SupportOracleSpec) -> OracleScorer:
    return OracleScorer(spec)


class HttpScorer:
    """Client for the POST /v1/logprob wire protocol.

    Request JSON: {"sentences": [{"id": int, "text": str}, ...],
    "query": str, "history": str, "target": str}; response 200 JSON:
    {"logprob": float}. 400 means the request is invalid (not retried);
    timeouts, connection failures, and 5xx responses are retried with
    exponential backoff.
    """

    def __init__(self, endpoint: str, auth_token: str | None = None, *,
                 timeout: float = 60.0, max_retries: int = 3,
                 backoff: float = 0.5):
        base = endpoint.rstrip("/")
        self.url = base if base.endswith(LOGPROB_PATH) else base + LOGPROB_PATH
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self._headers = {"Content-Type": "application/json"}
        if auth_token:
            self._headers["Authorization"] = f"Bearer {auth_token}"

    def score(self, req: ScoreRequest) -> float:
        payload = {
            "sentences": req.sentences_payload(),
            "query": req.query,
            "history": req.history,
            "target": req.target,
        }
        last_error: Exception = BackendUnavailable("no attempt made")
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = requests.post(self.url, json=payload,
                                     headers=self._headers, timeout=self.timeout)
            except requests.Timeout:
                last_error = BackendTimeout(f"timeout after {self.timeout}s")
                continue
            except requests.RequestException as exc:
                last_error = BackendUnavailable(str(exc))
                continue
            if resp.status_code == 200:
                try:
                    value = float(resp.json()["logprob"])
                except (ValueError, KeyError, TypeError) as exc:
                    raise BackendUnavailable(f"malformed response body: {exc}")
                if not math.isfinite(value):
                    raise BackendUnavailable(f"non-finite logprob {value!r}")
                return value
            if resp.status_code == 400:
                raise InvalidRequest(resp.text[:200])
            if resp.status_code >= 500 or resp.status_code == 503:
                last_error = BackendUnavailable(f"HTTP {resp.status_code}")
                continue
            raise InvalidRequest(f"unexpected HTTP {resp.status_code}: {resp.text[:200]}")
        raise last_error


def http_scorer(endpoint: str, auth_token: str | None = None, *,
                timeout: float = 60.0, max_retries: int = 3) -> HttpScorer:
    return HttpScorer(endpoint, auth_token, timeout=timeout, max_retries=max_retries)


class SerializingScorer:
    """Wrap a non-thread-safe scorer so concurrent callers are serialized."""

    def __init__(self, inner: Scorer):
        self._inner = inner
        self._lock = threading.Lock()

    def score(self, req: ScoreRequest) -> float:
        with self._lock:
            return self._inner.score(req)
