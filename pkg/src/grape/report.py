"""Corpus-scale analysis artifacts.

Given top-1 selections from several scorers over one pool set, the
breakdown matrix counts how often each scorer's choice came from each
source, and the agreement statistic is the fraction of pools where two
scorers picked the same response. Output is CSV + JSON with deterministic
bytes; heatmap figures are rendered next to them (figures.py).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import CandidatePool
from .errors import ReportError
from .selection import SelectionResult


@dataclass(frozen=True)
class BreakdownMatrix:
    scorer_ids: tuple[str, ...]  # rows
    source_ids: tuple[str, ...]  # cols
    counts: tuple[tuple[int, ...], ...]

    def row_sum(self, i: int) -> int:
        return sum(self.counts[i])

    def to_csv(self) -> str:
        lines = ["scorer_id,source_id,count"]
        for i, scorer in enumerate(self.scorer_ids):
            for j, source in enumerate(self.source_ids):
                lines.append(f"{scorer},{source},{self.counts[i][j]}")
        return "\n".join(lines) + "\n"


def _check_same_pool_set(results_by_scorer: Mapping[str, Sequence[SelectionResult]]) -> set[str]:
    pool_sets = {
        scorer: {r.instruction_id for r in results} for scorer, results in results_by_scorer.items()
    }
    sets = list(pool_sets.values())
    for other in sets[1:]:
        if other != sets[0]:
            raise ReportError("scorers cover different pool sets")
    return sets[0] if sets else set()


def _check_top1(results: Sequence[SelectionResult], scorer: str) -> None:
    for r in results:
        if len(r.chosen) != 1:
            raise ReportError(
                f"breakdown requires k=1 selections; scorer {scorer!r} chose "
                f"{len(r.chosen)} responses for {r.instruction_id}"
            )


def breakdown(
    results_by_scorer: Mapping[str, Sequence[SelectionResult]],
    pools: Sequence[CandidatePool],
) -> BreakdownMatrix:
    """Count, per scorer, how many top-1 choices came from each source.

    Sources are the union over all pool candidates, so columns do not
    depend on which responses happened to win.
    """
    if not results_by_scorer:
        raise ReportError("no selection results supplied")
    pool_iids = {p.instruction_id for p in pools}
    covered = _check_same_pool_set(results_by_scorer)
    if covered - pool_iids:
        raise ReportError("selection results reference pools not supplied")
    sources = sorted({c.source_id for p in pools for c in p.candidates})
    source_index = {s: j for j, s in enumerate(sources)}
    scorers = sorted(results_by_scorer)
    counts = [[0] * len(sources) for _ in scorers]
    for i, scorer in enumerate(scorers):
        results = results_by_scorer[scorer]
        _check_top1(results, scorer)
        for r in results:
            counts[i][source_index[r.chosen[0].source_id]] += 1
    return BreakdownMatrix(
        scorer_ids=tuple(scorers),
        source_ids=tuple(sources),
        counts=tuple(tuple(row) for row in counts),
    )


def agreement(results_a: Sequence[SelectionResult], results_b: Sequence[SelectionResult]) -> float:
    """Fraction of pools where both scorers picked the same response (k=1)."""
    _check_top1(results_a, "a")
    _check_top1(results_b, "b")
    by_iid_a = {r.instruction_id: r.chosen[0].response_id for r in results_a}
    by_iid_b = {r.instruction_id: r.chosen[0].response_id for r in results_b}
    if set(by_iid_a) != set(by_iid_b):
        raise ReportError("agreement requires the same pool set on both sides")
    if not by_iid_a:
        raise ReportError("agreement over an empty pool set is undefined")
    same = sum(1 for iid, rid in by_iid_a.items() if by_iid_b[iid] == rid)
    return same / len(by_iid_a)


def summary(
    pools: Sequence[CandidatePool],
    results_by_scorer: Mapping[str, Sequence[SelectionResult]],
) -> dict:
    """JSON-ready summary: corpus counts, per-scorer breakdown, pairwise agreement."""
    matrix = breakdown(results_by_scorer, pools)
    per_scorer = {
        scorer: {
            source: matrix.counts[i][j]
            for j, source in enumerate(matrix.source_ids)
            if matrix.counts[i][j] > 0
        }
        for i, scorer in enumerate(matrix.scorer_ids)
    }
    pairwise = {}
    scorers = list(matrix.scorer_ids)
    for i, a in enumerate(scorers):
        for b in scorers[i + 1 :]:
            pairwise[f"{a}|{b}"] = agreement(results_by_scorer[a], results_by_scorer[b])
    return {
        "pools": len(pools),
        "pairs": sum(len(p.candidates) for p in pools),
        "per_scorer": per_scorer,
        "pairwise_agreement": pairwise,
    }


def write_report(
    pools: Sequence[CandidatePool],
    results_by_scorer: Mapping[str, Sequence[SelectionResult]],
    csv_path,
    json_path,
) -> BreakdownMatrix:
    matrix = breakdown(results_by_scorer, pools)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(matrix.to_csv())
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary(pools, results_by_scorer), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return matrix
