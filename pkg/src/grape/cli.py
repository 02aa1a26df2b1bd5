"""Command-line entry point.

Subcommands mirror the pipeline stages and run standalone on the previous
stage's artifacts:

    grape ingest  --sources a.jsonl b.jsonl --out pools.jsonl
    grape score   --pools pools.jsonl --backend bigram --bigram-corpus c.txt --out scores.jsonl
    grape select  --strategy grape --k 1 --pools pools.jsonl --scores scores.jsonl --out selected.jsonl
    grape analyze kl --pools pools.jsonl --scores scores.jsonl --k 2 --report kl.json
    grape cost    --params params.json --methods all --out table.csv
    grape report  --pools pools.jsonl --scores s1.jsonl s2.jsonl --out-dir report/
    grape run     --config run.json

Logs go to stderr; artifacts go to files, never stdout, so stages compose.
Exit codes: 0 success, 1 failure, 2 partial success with an errors sidecar.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .backends import BigramBackend, HttpScorerBackend
from .cache import ScoreCache
from .config import canonical_strategy_kind, validate_config
from .corpus import PoolFilterConfig, ROLE_TAGS, ingest, overlap_stats, read_pools, write_pools
from .costmodel import METHOD_NAMES, CostParams, compare, compare_csv
from .errors import ConfigError, GrapeError
from .figures import render_agreement_heatmap, render_breakdown_heatmap
from .klanalysis import analyze_pools
from .pipeline import run as run_pipeline
from .pipeline import score_from_file, score_pools
from .report import breakdown, summary
from .scoring import PromptTemplate, read_logprob_file, write_logprob_file
from .selection import SelectionStrategy, select_all, export_sft

log = logging.getLogger("grape")


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )


def _write_errors_sidecar(errors: list[dict], out: str) -> str:
    sidecar = out + ".errors.jsonl"
    with open(sidecar, "w", encoding="utf-8") as fh:
        for err in errors:
            fh.write(json.dumps(err, ensure_ascii=False) + "\n")
    return sidecar


def cmd_ingest(args) -> int:
    keep_roles = frozenset(args.keep_roles.split(",")) if args.keep_roles else None
    cfg = PoolFilterConfig(
        min_candidates=args.min_candidates,
        keep_roles=keep_roles or PoolFilterConfig().keep_roles,
        drop_losers=not args.keep_losers,
    )
    pools = ingest(args.sources, cfg, workers=args.workers)
    n = write_pools(pools, args.out)
    stats = overlap_stats(pools)
    if args.stats:
        with open(args.stats, "w", encoding="utf-8") as fh:
            json.dump(stats.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    log.info(
        "wrote %d pools (%d pairs) to %s", n, stats.total_pairs, args.out
    )
    return 0


def cmd_score(args) -> int:
    pools = read_pools(args.pools)
    template = PromptTemplate.from_file(args.template) if args.template else PromptTemplate()
    cache = ScoreCache(args.cache_dir) if args.cache_dir else None

    if args.backend == "file":
        if not args.logprob_file:
            raise ConfigError("--logprob-file is required with --backend file")
        scores, scorer_id = score_from_file(pools, args.logprob_file)
        errors: list[dict] = []
    else:
        if args.backend == "bigram":
            if not args.bigram_corpus:
                raise ConfigError("--bigram-corpus is required with --backend bigram")
            backend = BigramBackend.train_file(args.bigram_corpus)
        else:
            if not args.endpoint:
                raise ConfigError("--endpoint is required with --backend http")
            backend = HttpScorerBackend(args.endpoint)
        scores, errors = score_pools(
            pools, backend, template, max_inflight=args.max_inflight, cache=cache
        )
        scorer_id = backend.scorer_id
    write_logprob_file(scores, args.out, template.template_hash)
    log.info("scored %d responses under %s", len(scores), scorer_id)
    if cache is not None:
        log.info("cache: %s", cache.stats())
    if errors:
        sidecar = _write_errors_sidecar(errors, args.out)
        log.warning("%d pools failed; see %s", len(errors), sidecar)
        return 2 if scores else 1
    return 0


def cmd_select(args) -> int:
    pools = read_pools(args.pools)
    strategy = SelectionStrategy(
        kind=canonical_strategy_kind(args.strategy), k=args.k, seed=args.seed
    )
    scores = read_logprob_file(args.scores) if args.scores else []
    k_map = None
    if args.k_map:
        with open(args.k_map, "r", encoding="utf-8") as fh:
            k_map = {str(key): int(val) for key, val in json.load(fh).items()}
    results, errors = select_all(
        pools, scores, strategy, emit_token_weights=args.emit_token_weights, k_map=k_map
    )
    export_sft(results, pools, args.out)
    log.info("selected %d instructions -> %s", len(results), args.out)
    if errors:
        sidecar = _write_errors_sidecar(errors, args.out)
        log.warning("%d pools failed; see %s", len(errors), sidecar)
        return 2 if results else 1
    return 0


def cmd_analyze(args) -> int:
    if args.what != "kl":
        raise ConfigError(f"unknown analysis {args.what!r}; expected 'kl'")
    pools = read_pools(args.pools)
    scores = read_logprob_file(args.scores)
    by_iid: dict[str, list] = {}
    for score in scores:
        by_iid.setdefault(score.instruction_id, []).append(score)
    pools_scores = [
        (p.instruction_id, by_iid[p.instruction_id]) for p in pools if p.instruction_id in by_iid
    ]
    report = analyze_pools(pools_scores, args.k)
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info(
        "kl analysis: %d/%d pools pass (max_abs_error=%.3g)",
        report.passes,
        report.trials,
        report.max_abs_error,
    )
    return 0 if report.passes == report.trials else 1


def cmd_cost(args) -> int:
    with open(args.params, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    params = CostParams(
        n=raw["n"],
        f_theta=raw["f_theta"],
        f_ref=raw.get("f_ref", 1.0),
        t=raw.get("t", 1),
        m=raw.get("m", 1),
        c_train=raw.get("c_train", {}),
    )
    methods = list(METHOD_NAMES) if args.methods == "all" else args.methods.split(",")
    rows = compare(methods, params)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(compare_csv(rows))
    log.info("wrote cost table for %d methods to %s", len(rows), args.out)
    return 0


def cmd_report(args) -> int:
    pools = read_pools(args.pools)
    results_by_scorer = {}
    for score_path in args.scores:
        scores = read_logprob_file(score_path)
        scorer_ids = {s.scorer_id for s in scores}
        if len(scorer_ids) != 1:
            raise ConfigError(f"{score_path} mixes scorer ids: {sorted(scorer_ids)}")
        scorer_id = scorer_ids.pop()
        results, errors = select_all(pools, scores, SelectionStrategy(kind="grape", k=1))
        if errors:
            raise ConfigError(
                f"cannot build report: {len(errors)} pools unselectable under {scorer_id}"
            )
        results_by_scorer[scorer_id] = results
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    matrix = breakdown(results_by_scorer, pools)
    with open(out_dir / "breakdown.csv", "w", encoding="utf-8") as fh:
        fh.write(matrix.to_csv())
    summ = summary(pools, results_by_scorer)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summ, fh, indent=2, sort_keys=True)
        fh.write("\n")
    render_breakdown_heatmap(matrix, out_dir / "breakdown_heatmap.png")
    if len(matrix.scorer_ids) > 1:
        render_agreement_heatmap(
            summ["pairwise_agreement"], matrix.scorer_ids, out_dir / "agreement_heatmap.png"
        )
    log.info("report written to %s", out_dir)
    return 0


def cmd_run(args) -> int:
    try:
        config, problems = validate_config(args.config)
    except ConfigError as exc:
        log.error("%s", exc)
        return 1
    if config is None:
        for problem in problems:
            log.error("config: %s", problem)
        return 1
    result = run_pipeline(config)
    for name, path in sorted(result.artifacts.items()):
        log.info("artifact %s: %s", name, path)
    return result.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grape",
        description="Curate SFT data by keeping the responses best aligned with a target base model.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level", default="info", choices=["debug", "info", "warning", "error"]
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="pool instruction-response records from JSONL sources")
    p.add_argument("--sources", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", default=None, help="write overlap statistics JSON here")
    p.add_argument("--min-candidates", type=int, default=2)
    p.add_argument("--keep-roles", default=None, help=f"comma-separated subset of {sorted(ROLE_TAGS)}")
    p.add_argument("--keep-losers", action="store_true", help="keep preference_loser records")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("score", help="score pool candidates under a backend")
    p.add_argument("--pools", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", required=True, choices=["http", "file", "bigram"])
    p.add_argument("--endpoint", default=None, help="base URL of a /v1/score server")
    p.add_argument("--logprob-file", default=None, help="existing Logprob File (file backend)")
    p.add_argument("--bigram-corpus", default=None, help="training bytes for the bigram backend")
    p.add_argument("--template", default=None, help="prompt template file with {instruction}")
    p.add_argument("--max-inflight", type=int, default=8)
    p.add_argument("--cache-dir", default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("select", help="apply a selection strategy per instruction")
    p.add_argument(
        "--strategy",
        required=True,
        choices=["grape", "reverse", "reverse_grape", "random", "reward", "sft-only", "sft_only"],
    )
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k-map", default=None, help="JSON map instruction_id -> k override")
    p.add_argument("--scores", default=None, help="Logprob File (not needed for random/sft-only)")
    p.add_argument("--pools", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-token-weights", action="store_true")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("analyze", help="subset-KL optimality analysis over scored pools")
    p.add_argument("what", choices=["kl"])
    p.add_argument("--pools", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("cost", help="evaluate the selection-method cost table")
    p.add_argument("--params", required=True, help="JSON file mirroring CostParams fields")
    p.add_argument("--methods", default="all", help="'all' or comma-separated method names")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("report", help="per-source breakdown and cross-scorer agreement")
    p.add_argument("--pools", required=True)
    p.add_argument("--scores", nargs="+", required=True, help="one Logprob File per scorer")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="full pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.log_level)
    try:
        return args.func(args)
    except GrapeError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
