"""Self-supervised citation-quality tooling for context-grounded LLM output.

Core flow: segment documents into id-stable sentences, parse tagged
statement/citation responses, score citations by context ablation
(probability drop + probability hold), rerank best-of-N citation
candidates, and build length-balanced preference pairs. A sparse linear
surrogate baseline attributes statements to sentences from random
ablations.
"""

__version__ = "0.1.0"

from .citations import (
    CitationSequence,
    CitationSpan,
    Statement,
    StructuredResponse,
    coverage,
    parse_citation_string,
    parse_response,
    resolve_cited_sentences,
    serialize_citation_string,
    serialize_response,
)
from .contextcite import (
    AblationSample,
    ExtractionConfig,
    SurrogateModel,
    extract_citations,
    fit_surrogate,
    sample_ablations,
    sft_filter,
)
from .prefs import (
    EditRecord,
    PrefBuildConfig,
    PreferencePair,
    TruncationPlan,
    apply_truncation,
    balance_lengths,
    build_pref_dataset,
    perturb_citations,
    plan_truncation,
    remap_response,
)
from .rerank import (
    Candidate,
    CandidateSource,
    HttpCandidateSource,
    RerankConfig,
    RerankResult,
    StaticCandidateSource,
    dedup_candidates,
    filter_candidate,
    rerank_response,
    rerank_statement,
)
from .rewards import (
    RewardBreakdown,
    count_tokens,
    default_token_counter,
    prob_drop,
    prob_hold,
    reward,
)
from .scoring import (
    HttpScorer,
    OracleScorer,
    ScoreRequest,
    Scorer,
    SupportOracleSpec,
    WeightedSupportScorer,
    build_scoring_prompt,
    http_scorer,
    oracle_scorer,
)
from .segmenter import (
    SegmentedContext,
    SentenceUnit,
    detect_language,
    join_sentences,
    render_prompt_context,
    render_prompt_subset,
    segment,
)

__all__ = [name for name in dir() if not name.startswith("_")]
