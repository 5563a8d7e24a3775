"""Pipeline configuration: YAML file + SELFCITE_* environment overrides.

A config file is a small key-value tree; every field has a default, so an
empty file (or none at all) is valid as long as the chosen command gets the
scorer it needs. Environment variables override file values using double
underscores as the path separator, e.g.::

    SELFCITE_SCORER__KIND=http
    SELFCITE_RERANK__N=5
    SELFCITE_BALANCE__SEED=7

Values are parsed as YAML scalars (so "true", "5", "0.7" get real types).
CLI flags override both.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .contextcite import ExtractionConfig
from .errors import ConfigError
from .rerank import RerankConfig

ENV_PREFIX = "SELFCITE_"


@dataclass(frozen=True)
class ScorerConfig:
    kind: str = "oracle"            # oracle | http
    endpoint: str | None = None
    oracle_spec_path: str | None = None
    timeout: float = 60.0
    max_retries: int = 3

    def validate(self):
        if self.kind not in ("oracle", "http"):
            raise ConfigError(f"scorer.kind must be oracle or http, got {self.kind!r}")

    def require_backend(self):
        """Commands that actually score enforce a complete scorer section."""
        self.validate()
        if self.kind == "oracle" and not self.oracle_spec_path:
            raise ConfigError("scorer.kind=oracle requires scorer.oracle_spec_path")
        if self.kind == "http" and not self.endpoint:
            raise ConfigError("scorer.kind=http requires scorer.endpoint")


@dataclass(frozen=True)
class BalanceConfig:
    window: tuple[int, int] = (5, 10)
    seed: int = 0

    def validate(self):
        lo, hi = self.window
        if not 1 <= lo <= hi:
            raise ConfigError(f"balance.window must satisfy 1 <= lo <= hi, got {self.window}")


@dataclass(frozen=True)
class TruncationConfig:
    budget_tokens: int = 25600

    def validate(self):
        if self.budget_tokens < 1:
            raise ConfigError("truncation.budget_tokens must be >= 1")


@dataclass(frozen=True)
class IoConfig:
    """Default file paths; per-command CLI flags override these."""

    input: str | None = None
    output: str | None = None
    candidates: str | None = None
    audit: str | None = None
    weights_output: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    rerank: RerankConfig = field(default_factory=RerankConfig)
    balance: BalanceConfig = field(default_factory=BalanceConfig)
    truncation: TruncationConfig = field(default_factory=TruncationConfig)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    io: IoConfig = field(default_factory=IoConfig)
    seed: int = 0
    workers: int | None = None      # None -> logical cores; runtime-only knob

    def validate(self):
        self.scorer.validate()
        self.balance.validate()
        self.truncation.validate()

    def config_hash(self) -> str:
        """Hash of the semantic configuration (workers excluded: runtime-only)."""
        data = asdict(self)
        data.pop("workers", None)
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"),
                               default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _set_path(tree: dict, path: list[str], value):
    node = tree
    for key in path[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override non-mapping config node {key!r}")
    node[path[-1]] = value


def _env_overrides(environ) -> dict:
    tree: dict = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in name[len(ENV_PREFIX):].split("__") if p]
        if not path:
            continue
        _set_path(tree, path, yaml.safe_load(raw))
    return tree


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _build(data: dict) -> PipelineConfig:
    try:
        scorer = ScorerConfig(**data.get("scorer", {}))
        rerank = RerankConfig(**data.get("rerank", {}))
        balance_raw = dict(data.get("balance", {}))
        if "window" in balance_raw:
            balance_raw["window"] = tuple(balance_raw["window"])
        balance = BalanceConfig(**balance_raw)
        truncation = TruncationConfig(**data.get("truncation", {}))
        extraction = ExtractionConfig(**data.get("extraction", {}))
        io = IoConfig(**data.get("io", {}))
        return PipelineConfig(
            scorer=scorer, rerank=rerank, balance=balance,
            truncation=truncation, extraction=extraction, io=io,
            seed=int(data.get("seed", 0)),
            workers=data.get("workers"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad configuration: {exc}")


def load_config(path: str | Path | None = None, *, environ=None) -> PipelineConfig:
    """Load, merge (file then environment), build, and validate a config."""
    data: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file is not valid YAML: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping at top level")
        data = loaded
    data = _merge(data, _env_overrides(os.environ if environ is None else environ))
    cfg = _build(data)
    cfg.validate()
    return cfg
