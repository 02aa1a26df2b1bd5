"""End-to-end orchestration: ingest -> score -> select -> report -> manifest.

Every stage writes its artifacts to <name>.partial and renames them into
place only when the stage finishes, so an interrupted or failed run leaves
.partial files behind instead of half-written final artifacts. A manifest
records config hash, scorer identity, tool version, and counts; it is
identical across runs with identical inputs except for its timestamp.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .backends import BigramBackend, HttpScorerBackend, ScorerBackend
from .cache import ScoreCache
from .config import RunConfig
from .corpus import CandidatePool, ingest, overlap_stats, write_pools
from .errors import GrapeError, ScoreError
from .figures import render_breakdown_heatmap
from .report import breakdown, summary
from .scoring import (
    PromptTemplate,
    ScoredResponse,
    read_logprob_file,
    score_pool,
    write_logprob_file,
)
from .selection import select_all, export_sft

log = logging.getLogger("grape")


@dataclass
class RunResult:
    exit_code: int
    artifacts: dict[str, str] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    scorer_id: str | None = None
    cache_stats: dict | None = None
    backend_requests: int = 0
    errors: list[dict] = field(default_factory=list)


class _Stage:
    """Write-to-.partial-then-promote bookkeeping for one stage's artifacts."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.pending: list[tuple[Path, Path]] = []

    def path(self, name: str) -> Path:
        final = self.out_dir / name
        partial = self.out_dir / (name + ".partial")
        self.pending.append((partial, final))
        return partial

    def promote(self) -> list[Path]:
        done = []
        for partial, final in self.pending:
            if partial.exists():
                partial.replace(final)
                done.append(final)
        self.pending.clear()
        return done


def build_backend(config: RunConfig) -> ScorerBackend | None:
    """Backend object for bigram/http; file mode has none."""
    if config.backend.kind == "bigram":
        return BigramBackend.train_file(config.backend.corpus)
    if config.backend.kind == "http":
        return HttpScorerBackend(config.backend.endpoint)
    return None


def load_template(config: RunConfig) -> PromptTemplate:
    if config.template is None:
        return PromptTemplate()
    return PromptTemplate.from_file(config.template)


def score_from_file(
    pools: list[CandidatePool], logprob_path: str
) -> tuple[list[ScoredResponse], str]:
    """Offline scoring: match a Logprob File against pools, in pool order.

    The file must carry a single (scorer_id, template_hash) pair and cover
    every pool candidate.
    """
    records = read_logprob_file(logprob_path)
    scorer_ids = {r.scorer_id for r in records}
    if len(scorer_ids) != 1:
        raise ScoreError(f"logprob file mixes scorer ids: {sorted(scorer_ids)}")
    by_key = {(r.instruction_id, r.response_id): r for r in records}
    ordered: list[ScoredResponse] = []
    missing: list[str] = []
    for pool in pools:
        for cand in pool.candidates:
            rec = by_key.get((pool.instruction_id, cand.response_id))
            if rec is None:
                missing.append(f"{pool.instruction_id}/{cand.response_id}")
            else:
                ordered.append(rec)
    if missing:
        raise ScoreError(
            f"logprob file is missing {len(missing)} pool responses "
            f"(first: {missing[:3]})"
        )
    return ordered, scorer_ids.pop()


def score_pools(
    pools: list[CandidatePool],
    backend: ScorerBackend,
    template: PromptTemplate,
    *,
    max_inflight: int = 8,
    cache: ScoreCache | None = None,
) -> tuple[list[ScoredResponse], list[dict]]:
    """Score every pool; per-pool failures are collected, not raised."""
    scores: list[ScoredResponse] = []
    errors: list[dict] = []
    for pool in pools:
        try:
            scores.extend(
                score_pool(pool, backend, template, max_inflight=max_inflight, cache=cache)
            )
        except ScoreError as exc:
            errors.append(
                {
                    "instruction_id": pool.instruction_id,
                    "response_id": exc.response_id,
                    "error": str(exc),
                }
            )
    return scores, errors


def run(config: RunConfig) -> RunResult:
    """Execute the full pipeline described by a validated RunConfig."""
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = RunResult(exit_code=0)
    cache = ScoreCache(config.cache_dir) if config.cache_dir else None
    started_at = _dt.datetime.now(_dt.timezone.utc).isoformat()

    # ingest
    stage = _Stage(out_dir)
    try:
        pools = ingest(config.sources, config.filter, workers=config.workers)
        stats = overlap_stats(pools)
        write_pools(pools, stage.path("pools.jsonl"))
        with open(stage.path("overlap.json"), "w", encoding="utf-8") as fh:
            json.dump(stats.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        stage.promote()
    except GrapeError as exc:
        log.error("ingest failed: %s", exc)
        result.exit_code = 1
        return result
    result.artifacts["pools"] = str(out_dir / "pools.jsonl")
    result.counts["pools"] = stats.unique_instructions
    result.counts["pairs"] = stats.total_pairs
    log.info("ingest: %d pools, %d pairs", stats.unique_instructions, stats.total_pairs)

    # score
    stage = _Stage(out_dir)
    try:
        template = load_template(config)
        if config.backend.kind == "file":
            scores, scorer_id = score_from_file(pools, config.backend.logprob_file)
            score_errors: list[dict] = []
        else:
            backend = build_backend(config)
            scores, score_errors = score_pools(
                pools, backend, template, max_inflight=config.max_inflight, cache=cache
            )
            result.backend_requests = getattr(backend, "requests_issued", 0)
            scorer_id = backend.scorer_id
        write_logprob_file(scores, stage.path("scores.jsonl"), template.template_hash)
        if score_errors:
            with open(stage.path("scores.errors.jsonl"), "w", encoding="utf-8") as fh:
                for err in score_errors:
                    fh.write(json.dumps(err, ensure_ascii=False) + "\n")
        if not scores:
            # leave the stage unpromoted: artifacts stay under .partial names
            log.error("score produced no results; partial artifacts retained")
            result.exit_code = 1
            return result
        stage.promote()
    except GrapeError as exc:
        log.error("score failed: %s", exc)
        result.exit_code = 1
        return result
    result.artifacts["scores"] = str(out_dir / "scores.jsonl")
    result.scorer_id = scorer_id
    result.counts["scored"] = len(scores)
    result.errors.extend(score_errors)
    if cache is not None:
        result.cache_stats = cache.stats()
    log.info("score: %d responses under %s (%d failures)", len(scores), scorer_id, len(score_errors))

    # select + export
    stage = _Stage(out_dir)
    try:
        scored_iids = {s.instruction_id for s in scores}
        selectable = [p for p in pools if p.instruction_id in scored_iids]
        results, select_errors = select_all(
            selectable, scores, config.strategy, emit_token_weights=config.emit_token_weights
        )
        export_sft(results, selectable, stage.path("selected.jsonl"))
        if select_errors:
            with open(stage.path("selected.errors.jsonl"), "w", encoding="utf-8") as fh:
                for err in select_errors:
                    fh.write(json.dumps(err, ensure_ascii=False) + "\n")
        stage.promote()
    except GrapeError as exc:
        log.error("select failed: %s", exc)
        result.exit_code = 1
        return result
    result.artifacts["selected"] = str(out_dir / "selected.jsonl")
    result.counts["selected"] = len(results)
    result.errors.extend(select_errors)
    log.info("select: %d instructions selected (%d failures)", len(results), len(select_errors))

    # report (single-scorer breakdown) + figures; only defined for top-1 runs
    report_possible = bool(results) and all(len(r.chosen) == 1 for r in results)
    stage = _Stage(out_dir)
    try:
        if report_possible:
            results_by_scorer = {scorer_id: results}
            matrix = breakdown(results_by_scorer, selectable)
            with open(stage.path("breakdown.csv"), "w", encoding="utf-8") as fh:
                fh.write(matrix.to_csv())
            with open(stage.path("summary.json"), "w", encoding="utf-8") as fh:
                json.dump(summary(selectable, results_by_scorer), fh, indent=2, sort_keys=True)
                fh.write("\n")
            render_breakdown_heatmap(matrix, stage.path("breakdown_heatmap.png"))
        stage.promote()
    except GrapeError as exc:
        log.error("report failed: %s", exc)
        result.exit_code = 1
        return result
    if report_possible:
        result.artifacts["breakdown"] = str(out_dir / "breakdown.csv")
        result.artifacts["summary"] = str(out_dir / "summary.json")
        result.artifacts["breakdown_heatmap"] = str(out_dir / "breakdown_heatmap.png")

    # manifest
    manifest = {
        "tool_version": __version__,
        "config_hash": config.config_hash,
        "scorer_id": scorer_id,
        "template_hash": template.template_hash,
        "strategy": {"kind": config.strategy.kind, "k": config.strategy.k, "seed": config.strategy.seed},
        "counts": dict(sorted(result.counts.items())),
        "created_at": started_at,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    result.artifacts["manifest"] = str(out_dir / "manifest.json")

    if result.errors:
        result.exit_code = 2
    return result
