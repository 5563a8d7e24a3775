"""Unified command-line entry point.

Subcommands: segment, reward, rerank, build-prefs, perturb, contextcite,
sft-filter. Every run streams JSONL in, writes to ``<output>.partial``, and
renames to the final path only on success, next to a ``<output>.manifest.json``
recording the config hash, seed, and input/output digests. Given identical
config, inputs, and seeds, outputs are byte-identical (worker count changes
throughput only; records are written in input order).

Exit codes: 0 ok, 1 config error, 2 input error, 3 scoring-backend error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Iterator

from . import __version__
from .citations import (
    Statement,
    StructuredResponse,
    parse_response,
    resolve_cited_sentences,
    response_from_record,
    response_to_record,
    serialize_response,
)
from .config import PipelineConfig, load_config
from .contextcite import ExtractionConfig, extract_citations, fit_surrogate, sample_ablations
from .errors import (
    ConfigError,
    DidNotConverge,
    InputError,
    ScorerError,
    SelfCiteError,
)
from .jsonl import dumps_canonical, read_jsonl, sha256_file, write_jsonl
from .prefs import PrefBuildConfig, build_pref_dataset, pair_to_record, perturb_citations, record_seed
from .rerank import HttpCandidateSource, StaticCandidateSource, rerank_response
from .rewards import reward
from .scoring import HttpScorer, OracleScorer, Scorer, SupportOracleSpec
from .segmenter import context_from_record, context_to_record, segment

logger = logging.getLogger(__name__)


def _make_scorer(cfg: PipelineConfig, override: str | None) -> Scorer:
    """Resolve a scorer from the --scorer flag ("oracle:path" | URL) or config."""
    if override:
        if override.startswith("oracle:"):
            path = override[len("oracle:"):]
            if not Path(path).exists():
                raise InputError(f"oracle spec not found: {path}")
            return OracleScorer(SupportOracleSpec.from_file(path))
        if override.startswith(("http://", "https://")):
            return HttpScorer(override, timeout=cfg.scorer.timeout,
                              max_retries=cfg.scorer.max_retries)
        raise ConfigError(f"--scorer must be oracle:<path> or an http(s) URL, got {override!r}")
    cfg.scorer.require_backend()
    if cfg.scorer.kind == "oracle":
        if not Path(cfg.scorer.oracle_spec_path).exists():
            raise InputError(f"oracle spec not found: {cfg.scorer.oracle_spec_path}")
        return OracleScorer(SupportOracleSpec.from_file(cfg.scorer.oracle_spec_path))
    return HttpScorer(cfg.scorer.endpoint, timeout=cfg.scorer.timeout,
                      max_retries=cfg.scorer.max_retries)


def _context_of(record: dict):
    if "sentences" in record:
        return context_from_record(record)
    if "text" in record:
        return segment(record["text"])
    raise InputError(f"record {record.get('doc_id', '?')!r} has neither 'sentences' nor 'text'")


def _response_of(record: dict):
    if "response" in record:
        return parse_response(record["response"])
    if "statements" in record:
        return response_from_record(record)
    raise InputError(f"record {record.get('doc_id', '?')!r} has neither 'response' nor 'statements'")


def _require_inputs(*paths: str | None):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise InputError(f"input file not found: {p}")


def _resolve_io(args, cfg: PipelineConfig):
    """Fill --input/--output (and friends) from the config's io section."""
    for name in ("input", "output", "candidates", "audit", "weights_output"):
        if hasattr(args, name) and getattr(args, name) is None:
            setattr(args, name, getattr(cfg.io, name))
    for name in ("input", "output"):
        if hasattr(args, name) and getattr(args, name) is None:
            raise ConfigError(f"--{name} not given and io.{name} not configured")


class _RunWriter:
    """Writes an output JSONL atomically and collects the run manifest."""

    def __init__(self, command: str, cfg: PipelineConfig, inputs: list[str]):
        self.command = command
        self.cfg = cfg
        self.inputs = inputs
        self.outputs: list[tuple[str, int]] = []

    def write(self, path: str, rows: Iterable[dict]):
        partial = path + ".partial"
        count = write_jsonl(partial, rows)
        os.replace(partial, path)
        self.outputs.append((path, count))

    def finish(self):
        if not self.outputs:
            return
        primary = self.outputs[0][0]
        manifest = {
            "command": self.command,
            "config_hash": self.cfg.config_hash(),
            "seed": self.cfg.seed,
            "inputs": {p: sha256_file(p) for p in self.inputs},
            "outputs": {p: {"sha256": sha256_file(p), "records": n}
                        for p, n in self.outputs},
        }
        with open(primary + ".manifest.json", "w", encoding="utf-8") as fh:
            fh.write(dumps_canonical(manifest) + "\n")


def _parallel_map(fn: Callable, items: list, workers: int) -> Iterator:
    """Order-preserving map; workers affect throughput, never output bytes."""
    if workers <= 1 or len(items) <= 1:
        return iter([fn(x) for x in items])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return iter(list(pool.map(fn, items)))


def _effective_workers(cfg: PipelineConfig) -> int:
    return cfg.workers if cfg.workers else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_segment(args, cfg: PipelineConfig) -> int:
    _resolve_io(args, cfg)
    _require_inputs(args.input)
    writer = _RunWriter("segment", cfg, [args.input])

    def rows():
        if args.input.endswith(".jsonl"):
            for record in read_jsonl(args.input):
                ctx = segment(record["text"], args.language)
                yield context_to_record(str(record["doc_id"]), ctx)
        else:
            text = Path(args.input).read_text(encoding="utf-8")
            ctx = segment(text, args.language)
            yield context_to_record(Path(args.input).stem, ctx)

    writer.write(args.output, rows())
    writer.finish()
    return 0


def cmd_reward(args, cfg: PipelineConfig) -> int:
    _resolve_io(args, cfg)
    _require_inputs(args.input)
    scorer = _make_scorer(cfg, args.scorer)
    writer = _RunWriter("reward", cfg, [args.input])

    def one(record: dict) -> dict:
        ctx = _context_of(record)
        resp = _response_of(record)
        out = response_to_record(str(record.get("doc_id", "")),
                                 record.get("query", ""), resp)
        for idx, st in enumerate(resp.statements):
            history = serialize_response(StructuredResponse(resp.statements[:idx]))
            cited = resolve_cited_sentences(st.citation, ctx)
            breakdown = reward(scorer, ctx, record.get("query", ""), history,
                               st.text, cited)
            out["statements"][idx]["reward"] = breakdown.as_dict()
        return out

    records = list(read_jsonl(args.input))
    writer.write(args.output, _parallel_map(one, records, _effective_workers(cfg)))
    writer.finish()
    return 0


def cmd_rerank(args, cfg: PipelineConfig) -> int:
    _resolve_io(args, cfg)
    candidates_arg = args.candidates
    live_endpoint = candidates_arg and candidates_arg.startswith(("http://", "https://"))
    _require_inputs(args.input, None if live_endpoint else candidates_arg)
    scorer = _make_scorer(cfg, args.scorer)

    shared_source = None
    if live_endpoint:
        shared_source = HttpCandidateSource(candidates_arg, n=cfg.rerank.n)
    elif candidates_arg:
        shared_source = StaticCandidateSource.from_jsonl(candidates_arg)

    inputs = [args.input] + ([candidates_arg] if candidates_arg and not live_endpoint else [])
    writer = _RunWriter("rerank", cfg, inputs)

    def one(record: dict) -> dict:
        doc_id = str(record.get("doc_id", ""))
        ctx = _context_of(record)
        resp = _response_of(record)
        source = shared_source or StaticCandidateSource(record.get("candidates", []))
        result = rerank_response(scorer, ctx, record.get("query", ""), resp,
                                 source, cfg.rerank, doc_id=doc_id)
        out = response_to_record(doc_id, record.get("query", ""), result.response)
        out["response"] = serialize_response(result.response)
        audit = {
            "doc_id": doc_id,
            "statements": [[c.as_dict() for c in statement_audit]
                           for statement_audit in result.audits],
        }
        return {"out": out, "audit": audit}

    records = list(read_jsonl(args.input))
    results = list(_parallel_map(one, records, _effective_workers(cfg)))
    writer.write(args.output, (r["out"] for r in results))
    audit_path = args.audit or args.output + ".audit.jsonl"
    writer.write(audit_path, (r["audit"] for r in results))
    writer.finish()
    return 0


def cmd_build_prefs(args, cfg: PipelineConfig) -> int:
    _resolve_io(args, cfg)
    _require_inputs(args.input)
    scorer = _make_scorer(cfg, args.scorer)
    build_cfg = PrefBuildConfig(
        rerank=cfg.rerank,
        window=cfg.balance.window,
        seed=cfg.seed,
        budget_tokens=cfg.truncation.budget_tokens,
    )
    writer = _RunWriter("build-prefs", cfg, [args.input])
    pairs = build_pref_dataset(read_jsonl(args.input), scorer, build_cfg)
    writer.write(args.output, (pair_to_record(pair, meta) for pair, meta in pairs))
    writer.finish()
    return 0


def cmd_perturb(args, cfg: PipelineConfig) -> int:
    _resolve_io(args, cfg)
    _require_inputs(args.input)
    writer = _RunWriter("perturb", cfg, [args.input])
    base_seed = cfg.seed
    shift = (args.shift_min, args.shift_max)

    def rows():
        for record in read_jsonl(args.input):
            doc_id = str(record.get("doc_id", ""))
            ctx = _context_of(record)
            resp = _response_of(record)
            seed = record_seed(base_seed, doc_id)
            perturbed = perturb_citations(resp, ctx, shift_range=shift, rng_seed=seed)
            yield {
                "doc_id": doc_id,
                "query": record.get("query", ""),
                "chosen": serialize_response(resp),
                "rejected": serialize_response(perturbed),
                "meta": {"seed": seed, "shift_range": list(shift)},
            }

    writer.write(args.output, rows())
    writer.finish()
    return 0


def cmd_contextcite(args, cfg: PipelineConfig) -> int:
    _resolve_io(args, cfg)
    _require_inputs(args.input)
    scorer = _make_scorer(cfg, args.scorer)
    extraction = ExtractionConfig(t=args.t, p=args.p, k=args.k)
    writer = _RunWriter("contextcite", cfg, [args.input])
    base_seed = cfg.seed

    weight_rows: list[dict] = []
    citation_rows: list[dict] = []
    for record in read_jsonl(args.input):
        doc_id = str(record.get("doc_id", ""))
        ctx = _context_of(record)
        resp = _response_of(record)
        attributed = []
        for idx, st in enumerate(resp.statements):
            seed = record_seed(base_seed, f"{doc_id}:{idx}")
            samples = sample_ablations(scorer, ctx, record.get("query", ""),
                                       st.text, n=args.calls, rng_seed=seed)
            try:
                model = fit_surrogate(samples, lam=args.lam)
            except DidNotConverge as exc:
                logger.warning("doc %s statement %d: %s; using best iterate",
                               doc_id, idx, exc)
                model = exc.model
            seq = extract_citations(model, ctx, extraction)
            attributed.append(Statement(st.text, seq))
            weight_rows.append({
                "doc_id": doc_id,
                "statement_index": idx,
                "weights": [float(w) for w in model.weights],
                "bias": model.bias,
                "lam": model.lam,
                "n_samples": model.n_samples,
            })
        new_resp = StructuredResponse(tuple(attributed))
        row = response_to_record(doc_id, record.get("query", ""), new_resp)
        row["response"] = serialize_response(new_resp)
        citation_rows.append(row)

    writer.write(args.output, iter(citation_rows))
    weights_path = args.weights_output or args.output + ".weights.jsonl"
    writer.write(weights_path, iter(weight_rows))
    writer.finish()
    return 0


def cmd_sft_filter(args, cfg: PipelineConfig) -> int:
    _resolve_io(args, cfg)
    _require_inputs(args.input)
    writer = _RunWriter("sft-filter", cfg, [args.input])

    def rows():
        for record in read_jsonl(args.input):
            resp = _response_of(record)
            total = len(resp.statements)
            if total == 0:
                continue
            empty = sum(1 for st in resp.statements if st.citation.is_empty())
            if empty / total > args.threshold:
                continue
            yield record

    writer.write(args.output, rows())
    writer.finish()
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selfcite",
        description="Citation-quality rewards, best-of-N reranking, and "
                    "preference dataset construction via context ablation.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", default=None, help="YAML config file")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker threads (default: logical cores)")
    parser.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="split documents into identified sentences")
    p.add_argument("--input", default=None, help="UTF-8 text file or JSONL of {doc_id, text}")
    p.add_argument("--output", default=None)
    p.add_argument("--language", default="auto", choices=["latin", "cjk", "auto"])
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("reward", help="score each statement's own citations")
    p.add_argument("--input", default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--scorer", default=None, help="oracle:<spec.json> or http(s) URL")
    p.set_defaults(fn=cmd_reward)

    p = sub.add_parser("rerank", help="best-of-N rerank citation candidates")
    p.add_argument("--input", default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--candidates", default=None,
                   help="JSONL of {doc_id, candidates} (else embedded in input records)")
    p.add_argument("--audit", default=None, help="audit JSONL path (default <output>.audit.jsonl)")
    p.add_argument("--scorer", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--lmax", type=int, default=None)
    p.add_argument("--selector", default=None)
    p.set_defaults(fn=cmd_rerank)

    p = sub.add_parser("build-prefs", help="construct length-balanced preference pairs")
    p.add_argument("--input", default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--scorer", default=None)
    p.set_defaults(fn=cmd_build_prefs)

    p = sub.add_parser("perturb", help="denoising pairs: original vs shifted citations")
    p.add_argument("--input", default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--shift-min", type=int, default=3)
    p.add_argument("--shift-max", type=int, default=10)
    p.set_defaults(fn=cmd_perturb)

    p = sub.add_parser("contextcite", help="surrogate-model attribution baseline")
    p.add_argument("--input", default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--weights-output", default=None,
                   help="raw weights JSONL (default <output>.weights.jsonl)")
    p.add_argument("--scorer", default=None)
    p.add_argument("--calls", type=int, default=32, help="ablation samples per statement")
    p.add_argument("--lam", type=float, default=0.01, help="Lasso penalty")
    p.add_argument("--t", type=float, default=1.5)
    p.add_argument("--p", type=float, default=0.7)
    p.add_argument("--k", type=int, default=4)
    p.set_defaults(fn=cmd_contextcite)

    p = sub.add_parser("sft-filter", help="drop examples with too many uncited statements")
    p.add_argument("--input", default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--threshold", type=float, default=0.30)
    p.set_defaults(fn=cmd_sft_filter)

    return parser


def _apply_flag_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    from dataclasses import replace
    try:
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.workers is not None:
            cfg = replace(cfg, workers=args.workers)
        rerank_kwargs = {}
        if getattr(args, "n", None) is not None:
            rerank_kwargs["n"] = args.n
        if getattr(args, "lmax", None) is not None:
            rerank_kwargs["l_max_tokens"] = args.lmax
        if getattr(args, "selector", None) is not None:
            rerank_kwargs["selector"] = args.selector
        if rerank_kwargs:
            cfg = replace(cfg, rerank=replace(cfg.rerank, **rerank_kwargs))
    except ValueError as exc:
        raise ConfigError(str(exc))
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        cfg = _apply_flag_overrides(cfg, args)
        cfg.validate()
        return args.fn(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (InputError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except ScorerError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    except SelfCiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
