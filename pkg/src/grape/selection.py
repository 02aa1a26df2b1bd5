"""Per-instruction response selection over scored candidate pools.

Strategies:
  grape         keep the k candidates with the lowest perplexity
                (equivalently the highest length-normalized logprob)
  reverse_grape adversarial baseline: the k highest-perplexity candidates
  random        hash-based uniform draw, bit-exact across implementations
  reward        the k candidates with the highest external scalar reward
  sft_only      pass-through baseline: the first sft-role candidate(s)

Ties on the rank key are broken by pool candidate order (earlier wins) and
flagged. The random draw is hash-based, not PRNG-stream-based, so results
do not depend on thread count or language: draw 0 hashes
seed(8-byte big-endian) || instruction_id(UTF-8); later draws append a
counter (8-byte big-endian, starting at 1, incremented on every rehash
including skips of already-chosen indices).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import CandidatePool
from .errors import ExportError, SelectError
from .hashing import fnv1a_64
from .scoring import ScoredResponse

STRATEGY_KINDS = ("grape", "reverse_grape", "random", "reward", "sft_only")


@dataclass(frozen=True)
class SelectionStrategy:
    kind: str = "grape"
    k: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise SelectError(f"unknown strategy kind {self.kind!r}; expected one of {STRATEGY_KINDS}")
        if self.k < 1:
            raise SelectError(f"k must be >= 1, got {self.k}")
        if not (0 <= self.seed < 2**64):
            raise SelectError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class ChosenResponse:
    response_id: str
    rank_key: float
    source_id: str


@dataclass(frozen=True)
class SelectionResult:
    instruction_id: str
    chosen: tuple[ChosenResponse, ...]
    strategy: SelectionStrategy
    tiebreak_applied: bool
    token_weights: tuple[float, ...] | None = None


def token_weights(score: ScoredResponse) -> list[float]:
    """Per-token weights for likelihood-weighted training loss downstream.

    weight_t = exp(logprob_t) = P(token_t | context); in (0, 1] for any
    probability-valid score. No training happens here; the weights are
    only exported.
    """
    return [math.exp(lp) for lp in score.answer_token_logprobs]


def _random_indices(instruction_id: str, seed: int, pool_size: int, k: int) -> list[int]:
    """Deterministic hash-based draw of k distinct indices (see module doc)."""
    iid_bytes = instruction_id.encode("utf-8")
    seed_bytes = seed.to_bytes(8, "big")
    chosen: list[int] = []
    idx = fnv1a_64(seed_bytes + iid_bytes) % pool_size
    chosen.append(idx)
    counter = 1
    while len(chosen) < k:
        idx = fnv1a_64(seed_bytes + iid_bytes + counter.to_bytes(8, "big")) % pool_size
        counter += 1
        if idx not in chosen:
            chosen.append(idx)
    return chosen


def _ranked_selection(
    pool: CandidatePool,
    keys: Sequence[float],
    k: int,
    descending: bool,
) -> tuple[list[int], bool]:
    """Pick k indices by rank key with pool-order tie-breaking.

    Returns the ordered indices and whether any tie actually influenced the
    chosen set or its order (equal keys inside the chosen set, or an
    unchosen candidate tying the selection boundary).
    """
    n = len(pool.candidates)
    k = min(k, n)
    sign = -1.0 if descending else 1.0
    order = sorted(range(n), key=lambda i: (sign * keys[i], i))
    picked = order[:k]
    chosen_keys = [keys[i] for i in picked]
    tiebreak = len(set(chosen_keys)) < len(chosen_keys)
    if not tiebreak and k < n:
        boundary = keys[picked[-1]]
        tiebreak = any(keys[i] == boundary for i in order[k:])
    return picked, tiebreak


def select(
    pool: CandidatePool,
    scores: Sequence[ScoredResponse],
    strategy: SelectionStrategy,
    *,
    emit_token_weights: bool = False,
) -> SelectionResult:
    """Apply a selection strategy to one pool.

    grape/reverse_grape require a score for every candidate, all from one
    scorer; random and sft_only accept empty scores. When k exceeds the
    pool size the whole pool is returned.
    """
    n = len(pool.candidates)
    if n == 0:
        raise SelectError(f"empty pool {pool.instruction_id}")
    by_rid: dict[str, ScoredResponse] = {}
    for score in scores:
        if score.instruction_id != pool.instruction_id:
            continue
        if score.response_id in by_rid:
            prev = by_rid[score.response_id]
            if prev.answer_token_logprobs != score.answer_token_logprobs or prev.scorer_id != score.scorer_id:
                raise SelectError(
                    f"conflicting duplicate scores for response {score.response_id} "
                    f"in pool {pool.instruction_id}"
                )
        by_rid[score.response_id] = score

    needs_scores = strategy.kind in ("grape", "reverse_grape")
    if needs_scores:
        scorer_ids = {s.scorer_id for s in by_rid.values()}
        if len(scorer_ids) > 1:
            raise SelectError(
                f"scores for pool {pool.instruction_id} mix scorer ids {sorted(scorer_ids)}"
            )
        missing = [c.response_id for c in pool.candidates if c.response_id not in by_rid]
        if missing:
            raise SelectError(
                f"pool {pool.instruction_id} is missing scores for responses {missing}"
            )

    tiebreak = False
    if strategy.kind == "grape":
        keys = [by_rid[c.response_id].perplexity for c in pool.candidates]
        picked, tiebreak = _ranked_selection(pool, keys, strategy.k, descending=False)
        rank_keys = [keys[i] for i in picked]
    elif strategy.kind == "reverse_grape":
        keys = [by_rid[c.response_id].perplexity for c in pool.candidates]
        picked, tiebreak = _ranked_selection(pool, keys, strategy.k, descending=True)
        rank_keys = [keys[i] for i in picked]
    elif strategy.kind == "reward":
        missing = [c.response_id for c in pool.candidates if c.reward is None]
        if missing:
            raise SelectError(
                f"reward strategy needs a reward on every candidate; pool "
                f"{pool.instruction_id} is missing {missing}"
            )
        keys = [float(c.reward) for c in pool.candidates]  # type: ignore[arg-type]
        picked, tiebreak = _ranked_selection(pool, keys, strategy.k, descending=True)
        rank_keys = [keys[i] for i in picked]
    elif strategy.kind == "random":
        picked = _random_indices(pool.instruction_id, strategy.seed, n, min(strategy.k, n))
        rank_keys = [float(j) for j in range(len(picked))]
    elif strategy.kind == "sft_only":
        sft_indices = [i for i, c in enumerate(pool.candidates) if c.role_tag == "sft"]
        if not sft_indices:
            raise SelectError(f"sft_only: pool {pool.instruction_id} has no sft-role candidate")
        picked = sft_indices[: min(strategy.k, len(sft_indices))]
        rank_keys = [float(i) for i in picked]
    else:  # pragma: no cover - guarded by SelectionStrategy
        raise SelectError(f"unknown strategy kind {strategy.kind!r}")

    chosen = tuple(
        ChosenResponse(
            response_id=pool.candidates[i].response_id,
            rank_key=rank_keys[j],
            source_id=pool.candidates[i].source_id,
        )
        for j, i in enumerate(picked)
    )

    weights: tuple[float, ...] | None = None
    if emit_token_weights:
        top = pool.candidates[picked[0]]
        score = by_rid.get(top.response_id)
        if score is None:
            raise SelectError(
                f"token weights requested but no score available for response "
                f"{top.response_id} in pool {pool.instruction_id}"
            )
        weights = tuple(token_weights(score))

    return SelectionResult(
        instruction_id=pool.instruction_id,
        chosen=chosen,
        strategy=strategy,
        tiebreak_applied=tiebreak,
        token_weights=weights,
    )


def select_all(
    pools: Sequence[CandidatePool],
    scores: Sequence[ScoredResponse],
    strategy: SelectionStrategy,
    *,
    emit_token_weights: bool = False,
    k_map: Mapping[str, int] | None = None,
) -> tuple[list[SelectionResult], list[dict]]:
    """Select over every pool; failures are collected, not raised.

    Returns (results, errors); each error is {"instruction_id", "error"}.
    Results are sorted by instruction_id, so output is independent of any
    parallel schedule upstream.
    """
    by_iid = {s.instruction_id: [] for s in scores}
    for s in scores:
        by_iid[s.instruction_id].append(s)
    results: list[SelectionResult] = []
    errors: list[dict] = []
    for pool in pools:
        strat = strategy
        if k_map is not None and pool.instruction_id in k_map:
            strat = SelectionStrategy(kind=strategy.kind, k=k_map[pool.instruction_id], seed=strategy.seed)
        try:
            results.append(
                select(
                    pool,
                    by_iid.get(pool.instruction_id, []),
                    strat,
                    emit_token_weights=emit_token_weights,
                )
            )
        except SelectError as exc:
            errors.append({"instruction_id": pool.instruction_id, "error": str(exc)})
    results.sort(key=lambda r: r.instruction_id)
    return results, errors


def export_sft(
    results: Sequence[SelectionResult],
    pools: Sequence[CandidatePool],
    path: str | Path,
) -> int:
    """Write the curated dataset as JSONL, ordered by instruction_id.

    One line per chosen response:
      {"instruction","response","source_id","rank_key","strategy","token_weights"}
    Output bytes are deterministic for identical inputs. A result whose
    instruction or response cannot be resolved against the pools is an
    ExportError.
    """
    pool_by_iid = {p.instruction_id: p for p in pools}
    lines: list[str] = []
    for result in sorted(results, key=lambda r: r.instruction_id):
        pool = pool_by_iid.get(result.instruction_id)
        if pool is None:
            raise ExportError(f"no pool for instruction_id {result.instruction_id}")
        for pos, choice in enumerate(result.chosen):
            cand = pool.candidate_by_id(choice.response_id)
            if cand is None:
                raise ExportError(
                    f"response {choice.response_id} not found in pool {result.instruction_id}"
                )
            weights = None
            if pos == 0 and result.token_weights is not None:
                weights = list(result.token_weights)
            lines.append(
                json.dumps(
                    {
                        "instruction": pool.instruction,
                        "response": cand.response,
                        "source_id": choice.source_id,
                        "rank_key": choice.rank_key,
                        "strategy": result.strategy.kind,
                        "token_weights": weights,
                    },
                    ensure_ascii=False,
                )
            )
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
    return len(lines)
