"""Run configuration: a single JSON file describing a full pipeline run.

Example:
    {
      "sources": ["data/tulu.jsonl", "data/pref.jsonl"],
      "filter": {"min_candidates": 2, "drop_losers": true},
      "backend": {"kind": "bigram", "corpus": "data/pretrain.txt"},
      "template": null,
      "strategy": {"kind": "grape", "k": 1, "seed": 0},
      "output_dir": "out",
      "cache_dir": "cache",
      "max_inflight": 8,
      "workers": 1,
      "log_level": "info",
      "emit_token_weights": false
    }

Validation collects every violation instead of stopping at the first. The
GRAPE_CACHE_DIR environment variable overrides cache_dir.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import ROLE_TAGS, DEFAULT_KEEP_ROLES, PoolFilterConfig
from .errors import ConfigError
from .hashing import fnv1a_64_hex
from .selection import STRATEGY_KINDS, SelectionStrategy

BACKEND_KINDS = ("bigram", "http", "file")
LOG_LEVELS = ("debug", "info", "warning", "error")

# CLI spellings accepted for strategy kinds
STRATEGY_ALIASES = {"reverse": "reverse_grape", "sft-only": "sft_only"}


def canonical_strategy_kind(kind: str) -> str:
    return STRATEGY_ALIASES.get(kind, kind)


@dataclass(frozen=True)
class BackendSpec:
    kind: str
    endpoint: str | None = None
    corpus: str | None = None
    logprob_file: str | None = None


@dataclass(frozen=True)
class RunConfig:
    sources: tuple[str, ...]
    filter: PoolFilterConfig
    backend: BackendSpec
    strategy: SelectionStrategy
    output_dir: str
    template: str | None = None  # path; None means the built-in default
    cache_dir: str | None = None
    max_inflight: int = 8
    workers: int = 1
    log_level: str = "info"
    emit_token_weights: bool = False
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def config_hash(self) -> str:
        return fnv1a_64_hex(json.dumps(self.raw, sort_keys=True, ensure_ascii=False).encode("utf-8"))


def _validate(raw: dict) -> tuple[RunConfig | None, list[str]]:
    problems: list[str] = []

    sources = raw.get("sources")
    if not isinstance(sources, list) or not sources or not all(isinstance(s, str) for s in sources):
        problems.append("sources must be a nonempty list of file paths")
        sources = []
    for src in sources:
        if not Path(src).is_file():
            problems.append(f"source file does not exist: {src}")

    fraw = raw.get("filter") or {}
    min_candidates = fraw.get("min_candidates", 2)
    drop_losers = fraw.get("drop_losers", True)
    keep_roles = fraw.get("keep_roles")
    if keep_roles is None:
        keep_roles = sorted(DEFAULT_KEEP_ROLES)
    if not isinstance(min_candidates, int) or min_candidates < 1:
        problems.append("filter.min_candidates must be a positive integer")
        min_candidates = 1
    bad_roles = set(keep_roles) - ROLE_TAGS
    if bad_roles:
        problems.append(f"filter.keep_roles has unknown role tags: {sorted(bad_roles)}")
        keep_roles = [r for r in keep_roles if r in ROLE_TAGS] or sorted(DEFAULT_KEEP_ROLES)

    braw = raw.get("backend") or {}
    kind = braw.get("kind")
    if kind not in BACKEND_KINDS:
        problems.append(f"backend.kind must be one of {BACKEND_KINDS}, got {kind!r}")
        kind = "bigram"
    endpoint = braw.get("endpoint")
    corpus = braw.get("corpus")
    logprob_file = braw.get("logprob_file")
    if kind == "http" and not endpoint:
        problems.append("backend.endpoint is required for the http backend")
    if kind == "bigram":
        if not corpus:
            problems.append("backend.corpus is required for the bigram backend")
        elif not Path(corpus).is_file():
            problems.append(f"bigram corpus file does not exist: {corpus}")
    if kind == "file":
        if not logprob_file:
            problems.append("backend.logprob_file is required for the file backend")
        elif not Path(logprob_file).is_file():
            problems.append(f"logprob file does not exist: {logprob_file}")

    template = raw.get("template")
    if template is not None:
        if not isinstance(template, str):
            problems.append("template must be a file path or null")
            template = None
        elif not Path(template).is_file():
            problems.append(f"template file does not exist: {template}")
        else:
            text = Path(template).read_text(encoding="utf-8")
            if "{instruction}" not in text:
                problems.append("template file lacks the {instruction} placeholder")

    straw = raw.get("strategy") or {}
    skind = canonical_strategy_kind(straw.get("kind", "grape"))
    k = straw.get("k", 1)
    seed = straw.get("seed", 0)
    if skind not in STRATEGY_KINDS:
        problems.append(f"strategy.kind must be one of {STRATEGY_KINDS}, got {straw.get('kind')!r}")
        skind = "grape"
    if not isinstance(k, int) or k < 1:
        problems.append("strategy.k must be a positive integer")
        k = 1
    if not isinstance(seed, int) or not (0 <= seed < 2**64):
        problems.append("strategy.seed must be a 64-bit unsigned integer")
        seed = 0

    output_dir = raw.get("output_dir")
    if not isinstance(output_dir, str) or not output_dir:
        problems.append("output_dir is required")
        output_dir = "."
    else:
        try:
            Path(output_dir).mkdir(parents=True, exist_ok=True)
            if not os.access(output_dir, os.W_OK):
                problems.append(f"output_dir is not writable: {output_dir}")
        except OSError as exc:
            problems.append(f"cannot create output_dir {output_dir}: {exc}")

    cache_dir = os.environ.get("GRAPE_CACHE_DIR") or raw.get("cache_dir")

    max_inflight = raw.get("max_inflight", 8)
    if not isinstance(max_inflight, int) or max_inflight < 1:
        problems.append("max_inflight must be a positive integer")
        max_inflight = 8
    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        problems.append("workers must be a positive integer")
        workers = 1

    log_level = raw.get("log_level", "info")
    if log_level not in LOG_LEVELS:
        problems.append(f"log_level must be one of {LOG_LEVELS}")
        log_level = "info"

    if problems:
        return None, problems

    config = RunConfig(
        sources=tuple(sources),
        filter=PoolFilterConfig(
            min_candidates=min_candidates,
            keep_roles=frozenset(keep_roles),
            drop_losers=bool(drop_losers),
        ),
        backend=BackendSpec(kind=kind, endpoint=endpoint, corpus=corpus, logprob_file=logprob_file),
        strategy=SelectionStrategy(kind=skind, k=k, seed=seed),
        output_dir=output_dir,
        template=template,
        cache_dir=cache_dir,
        max_inflight=max_inflight,
        workers=workers,
        log_level=log_level,
        emit_token_weights=bool(raw.get("emit_token_weights", False)),
        raw=raw,
    )
    return config, []


def validate_config(path: str | Path) -> tuple[RunConfig | None, list[str]]:
    """Load and validate a run config; returns (config, violations).

    All violations are reported, not just the first. A config that cannot
    even be parsed is a ConfigError.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return _validate(raw)


def load_config(path: str | Path) -> RunConfig:
    """validate_config, raising ConfigError with every violation on failure."""
    config, problems = validate_config(path)
    if config is None:
        raise ConfigError(f"invalid config {path}", violations=problems)
    return config
