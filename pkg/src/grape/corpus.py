"""Ingest instruction-response records from JSONL sources into candidate pools.

A pool gathers, for one canonical instruction, every distinct response seen
across all sources. Instruction identity is exact match on the canonical
form (whitespace-stripped, line endings normalized); ids are FNV-1a-64
content hashes so they are stable across runs and implementations.

Input record schema (one JSON object per line):
    {"source_id": str, "record_id": str, "instruction": str, "response": str,
     "role_tag": "sft"|"preference_winner"|"preference_loser"|"generated",
     "reward": number|null}

Pool export schema:
    {"instruction_id": str, "instruction": str,
     "candidates": [{"response_id": str, "response": str, "source_id": str,
                     "role_tag": str, "reward": number|null}]}
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import FormatError, IngestError
from .hashing import text_id

ROLE_TAGS = frozenset({"sft", "preference_winner", "preference_loser", "generated"})

DEFAULT_KEEP_ROLES = frozenset({"sft", "preference_winner", "generated"})


def canonicalize(text: str) -> str:
    """Normalize CRLF/CR line endings to LF and strip outer whitespace.

    Interior content is otherwise byte-identical.
    """
    return text.replace("\r\n", "\n").replace("\r", "\n").strip()


@dataclass(frozen=True)
class SourceRecord:
    source_id: str
    record_id: str
    instruction: str  # canonical
    response: str  # canonical
    role_tag: str
    reward: float | None = None


@dataclass(frozen=True)
class Candidate:
    response_id: str
    response: str
    source_id: str
    role_tag: str
    reward: float | None = None


@dataclass(frozen=True)
class CandidatePool:
    instruction_id: str
    instruction: str
    candidates: tuple[Candidate, ...]

    def __len__(self) -> int:
        return len(self.candidates)

    def candidate_by_id(self, response_id: str) -> Candidate | None:
        for cand in self.candidates:
            if cand.response_id == response_id:
                return cand
        return None


@dataclass(frozen=True)
class PoolFilterConfig:
    min_candidates: int = 2
    keep_roles: frozenset[str] = DEFAULT_KEEP_ROLES
    drop_losers: bool = True

    def __post_init__(self) -> None:
        if self.min_candidates < 1:
            raise IngestError(f"min_candidates must be >= 1, got {self.min_candidates}")
        bad = set(self.keep_roles) - ROLE_TAGS
        if bad:
            raise IngestError(f"unknown role tags in keep_roles: {sorted(bad)}")

    def keeps(self, role_tag: str) -> bool:
        if self.drop_losers and role_tag == "preference_loser":
            return False
        return role_tag in self.keep_roles


@dataclass
class OverlapReport:
    unique_instructions: int
    total_pairs: int
    pool_size_histogram: dict[int, int]
    per_source_counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "unique_instructions": self.unique_instructions,
            "total_pairs": self.total_pairs,
            "pool_size_histogram": {str(k): v for k, v in sorted(self.pool_size_histogram.items())},
            "per_source_counts": dict(sorted(self.per_source_counts.items())),
        }


def _parse_record(obj: dict, path: str, line_no: int) -> SourceRecord:
    if not isinstance(obj, dict):
        raise IngestError("record is not a JSON object", path=path, line=line_no)
    missing = [k for k in ("source_id", "record_id", "instruction", "response", "role_tag") if k not in obj]
    if missing:
        raise IngestError(f"record missing fields {missing}", path=path, line=line_no)
    source_id = obj["source_id"]
    record_id = obj["record_id"]
    role_tag = obj["role_tag"]
    if not isinstance(source_id, str) or not source_id:
        raise IngestError("source_id must be a nonempty string", path=path, line=line_no)
    if not isinstance(record_id, str) or not record_id:
        raise IngestError("record_id must be a nonempty string", path=path, line=line_no)
    if role_tag not in ROLE_TAGS:
        raise IngestError(f"unknown role_tag {role_tag!r}", path=path, line=line_no)
    if not isinstance(obj["instruction"], str) or not isinstance(obj["response"], str):
        raise IngestError("instruction and response must be strings", path=path, line=line_no)
    instruction = canonicalize(obj["instruction"])
    response = canonicalize(obj["response"])
    if not instruction:
        raise IngestError("instruction empty after canonicalization", path=path, line=line_no)
    if not response:
        raise IngestError("response empty after canonicalization", path=path, line=line_no)
    reward = obj.get("reward")
    if reward is not None:
        if isinstance(reward, bool) or not isinstance(reward, (int, float)):
            raise IngestError("reward must be a number or null", path=path, line=line_no)
        reward = float(reward)
        if not math.isfinite(reward):
            raise IngestError("reward must be finite", path=path, line=line_no)
    return SourceRecord(
        source_id=source_id,
        record_id=record_id,
        instruction=instruction,
        response=response,
        role_tag=role_tag,
        reward=reward,
    )


def _parse_source_file(path: str | Path) -> list[SourceRecord]:
    """Parse one JSONL source, streaming line by line.

    Enforces record_id uniqueness within each source_id seen in this file.
    """
    records: list[SourceRecord] = []
    seen_ids: set[tuple[str, str]] = set()
    spath = str(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise IngestError(f"malformed JSON: {exc.msg}", path=spath, line=line_no) from exc
                rec = _parse_record(obj, spath, line_no)
                key = (rec.source_id, rec.record_id)
                if key in seen_ids:
                    raise IngestError(
                        f"duplicate record_id {rec.record_id!r} within source {rec.source_id!r}",
                        path=spath,
                        line=line_no,
                    )
                seen_ids.add(key)
                records.append(rec)
    except UnicodeDecodeError as exc:
        raise IngestError(f"invalid UTF-8: {exc}", path=spath) from exc
    except OSError as exc:
        raise IngestError(f"cannot read source: {exc}", path=spath) from exc
    return records


class _PoolBuilder:
    """Deterministic reduction of records into pools, keyed by instruction_id."""

    def __init__(self) -> None:
        self.instructions: dict[str, str] = {}
        self.candidates: dict[str, list[Candidate]] = {}
        self.seen_responses: dict[str, dict[str, str]] = {}  # iid -> response_id -> text

    def add(self, rec: SourceRecord) -> None:
        iid = text_id(rec.instruction)
        known = self.instructions.get(iid)
        if known is None:
            self.instructions[iid] = rec.instruction
            self.candidates[iid] = []
            self.seen_responses[iid] = {}
        elif known != rec.instruction:
            # 64-bit content hashes collide with negligible but nonzero
            # probability; silently merging distinct instructions would
            # corrupt pools, so fail loudly instead.
            raise IngestError(
                f"instruction_id collision: {iid} maps to two distinct canonical instructions"
            )
        rid = text_id(rec.response)
        seen = self.seen_responses[iid]
        if rid in seen:
            if seen[rid] != rec.response:
                raise IngestError(
                    f"response_id collision: {rid} maps to two distinct canonical responses"
                )
            return  # exact duplicate response: first occurrence keeps provenance
        seen[rid] = rec.response
        self.candidates[iid].append(
            Candidate(
                response_id=rid,
                response=rec.response,
                source_id=rec.source_id,
                role_tag=rec.role_tag,
                reward=rec.reward,
            )
        )

    def build(self, min_candidates: int) -> list[CandidatePool]:
        pools = []
        for iid in sorted(self.instructions):
            cands = self.candidates[iid]
            if len(cands) < min_candidates:
                continue
            pools.append(
                CandidatePool(
                    instruction_id=iid,
                    instruction=self.instructions[iid],
                    candidates=tuple(cands),
                )
            )
        return pools


def ingest(
    sources: Sequence[str | Path],
    filter_config: PoolFilterConfig | None = None,
    *,
    workers: int = 1,
) -> list[CandidatePool]:
    """Build deduplicated candidate pools from JSONL sources.

    Candidate order within a pool is the stable ingestion order (source
    file order, then line order); tie-breaking downstream depends on it.
    Files may be parsed in parallel but are always merged in input order,
    so the result is independent of scheduling.
    """
    cfg = filter_config or PoolFilterConfig()
    if workers > 1 and len(sources) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parsed = list(pool.map(_parse_source_file, sources))
    else:
        parsed = [_parse_source_file(p) for p in sources]

    builder = _PoolBuilder()
    for records in parsed:
        for rec in records:
            if not cfg.keeps(rec.role_tag):
                continue
            builder.add(rec)
    return builder.build(cfg.min_candidates)


def overlap_stats(pools: Iterable[CandidatePool]) -> OverlapReport:
    """Count unique instructions, total pairs, pool sizes, source contributions."""
    histogram: dict[int, int] = {}
    per_source: dict[str, int] = {}
    unique = 0
    total = 0
    for pool in pools:
        unique += 1
        size = len(pool.candidates)
        total += size
        histogram[size] = histogram.get(size, 0) + 1
        for cand in pool.candidates:
            per_source[cand.source_id] = per_source.get(cand.source_id, 0) + 1
    return OverlapReport(
        unique_instructions=unique,
        total_pairs=total,
        pool_size_histogram=histogram,
        per_source_counts=per_source,
    )


def pool_to_dict(pool: CandidatePool) -> dict:
    return {
        "instruction_id": pool.instruction_id,
        "instruction": pool.instruction,
        "candidates": [
            {
                "response_id": c.response_id,
                "response": c.response,
                "source_id": c.source_id,
                "role_tag": c.role_tag,
                "reward": c.reward,
            }
            for c in pool.candidates
        ],
    }


def write_pools(pools: Iterable[CandidatePool], path: str | Path) -> int:
    """Write pools as JSONL (one pool per line). Returns line count."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for pool in pools:
            fh.write(json.dumps(pool_to_dict(pool), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_pools(path: str | Path) -> list[CandidatePool]:
    """Read a pool export, re-verifying content hashes against the texts."""
    pools: list[CandidatePool] = []
    spath = str(path)
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"malformed JSON: {exc.msg}", path=spath, line=line_no) from exc
            try:
                iid = obj["instruction_id"]
                instruction = obj["instruction"]
                raw_cands = obj["candidates"]
            except (KeyError, TypeError) as exc:
                raise FormatError(f"pool record missing field: {exc}", path=spath, line=line_no) from exc
            if text_id(instruction) != iid:
                raise FormatError(
                    f"instruction_id {iid} does not match instruction content hash",
                    path=spath,
                    line=line_no,
                )
            cands = []
            for raw in raw_cands:
                if text_id(raw["response"]) != raw["response_id"]:
                    raise FormatError(
                        f"response_id {raw['response_id']} does not match response content hash",
                        path=spath,
                        line=line_no,
                    )
                cands.append(
                    Candidate(
                        response_id=raw["response_id"],
                        response=raw["response"],
                        source_id=raw["source_id"],
                        role_tag=raw["role_tag"],
                        reward=None if raw.get("reward") is None else float(raw["reward"]),
                    )
                )
            pools.append(CandidatePool(instruction_id=iid, instruction=instruction, candidates=tuple(cands)))
    return pools


def pools_to_source_records(pools: Iterable[CandidatePool]) -> Iterator[dict]:
    """Flatten pools back into SourceRecord JSONL objects (for re-ingestion).

    record_id is instruction_id:response_id, which is unique within any
    source because responses are distinct within a pool.
    """
    for pool in pools:
        for cand in pool.candidates:
            yield {
                "source_id": cand.source_id,
                "record_id": f"{pool.instruction_id}:{cand.response_id}",
                "instruction": pool.instruction,
                "response": cand.response,
                "role_tag": cand.role_tag,
                "reward": cand.reward,
            }
