"""Score candidate responses under a target base model.

A response's score is the sum of its answer-token log-probabilities
(natural log, conditional on the rendered prompt), normalized by the
number of answer tokens. Perplexity is exp(-normalized). Prompt tokens
contribute nothing. Ranking candidates by ascending perplexity is the
same ordering as descending normalized log-probability.

Tokenization belongs to the backend, not this layer: two backends may
disagree on n_tokens for the same text, so scores are only comparable
within one scorer_id.

Logprob File format (JSONL, natural-log values):
    {"scorer_id": str, "instruction_id": str, "response_id": str,
     "template_hash": str, "answer_token_logprobs": [float, ...],
     "total_logprob": float}
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from .errors import FormatError, ScoreError
from .hashing import fnv1a_64_hex

if TYPE_CHECKING:
    from .backends import ScorerBackend
    from .cache import ScoreCache
    from .corpus import CandidatePool

DEFAULT_TEMPLATE = "Question: {instruction}\nAnswer: "

# total_logprob must equal the sum of token logprobs within this bound
TOTAL_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt template with a single {instruction} placeholder.

    Substitution is literal (str.replace), so instructions containing
    braces render byte-exactly.
    """

    text: str = DEFAULT_TEMPLATE

    def __post_init__(self) -> None:
        if "{instruction}" not in self.text:
            raise ScoreError("template must contain an {instruction} placeholder")

    def render(self, instruction: str) -> str:
        return self.text.replace("{instruction}", instruction)

    @property
    def template_hash(self) -> str:
        return fnv1a_64_hex(self.text.encode("utf-8"))

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplate":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(fh.read())


def render_prompt(instruction: str, template: PromptTemplate | None = None) -> str:
    """Render the scoring prompt; the response is scored as its continuation."""
    return (template or PromptTemplate()).render(instruction)


@dataclass(frozen=True)
class ScoreRequest:
    """One backend scoring request: the rendered prompt plus a completion."""

    prompt: str
    completion: str

    def __post_init__(self) -> None:
        if not self.completion:
            raise ScoreError("completion is empty")


@dataclass(frozen=True)
class ScoredResponse:
    instruction_id: str
    response_id: str
    scorer_id: str
    answer_token_logprobs: tuple[float, ...]
    n_tokens: int
    total_logprob: float
    normalized_logprob: float
    perplexity: float


def finalize_score(
    raw: Sequence[float],
    instruction_id: str,
    response_id: str,
    scorer_id: str,
) -> ScoredResponse:
    """Derive totals, the length-normalized score, and perplexity.

    Raises ScoreError on an empty list or any non-finite entry. Perplexity
    is exp(-total/n); for pathological logprobs below about -700 per token
    the exp overflows float64 and the perplexity is reported as +inf.
    """
    if len(raw) == 0:
        raise ScoreError("no answer tokens", response_id=response_id)
    logprobs = tuple(float(x) for x in raw)
    for x in logprobs:
        if not math.isfinite(x):
            raise ScoreError("non-finite logprob", response_id=response_id)
    total = math.fsum(logprobs)
    n = len(logprobs)
    normalized = total / n
    try:
        perplexity = math.exp(-normalized)
    except OverflowError:
        perplexity = math.inf
    return ScoredResponse(
        instruction_id=instruction_id,
        response_id=response_id,
        scorer_id=scorer_id,
        answer_token_logprobs=logprobs,
        n_tokens=n,
        total_logprob=total,
        normalized_logprob=normalized,
        perplexity=perplexity,
    )


def score_pool(
    pool: "CandidatePool",
    backend: "ScorerBackend",
    template: PromptTemplate | None = None,
    *,
    max_inflight: int = 8,
    cache: "ScoreCache | None" = None,
) -> list[ScoredResponse]:
    """Score every candidate in a pool, one ScoredResponse per candidate.

    Results are returned in the pool's candidate order regardless of the
    backend's completion order. A backend failure (after its own retries)
    raises ScoreError naming the failed response_id; partial results are
    never silently returned.
    """
    template = template or PromptTemplate()
    prompt = template.render(pool.instruction)
    thash = template.template_hash
    serial = not getattr(backend, "concurrency_safe", True)

    # The cache key needs the scorer identity; HTTP backends only learn it
    # from their first response, so score one candidate up front if needed.
    if cache is not None and backend.scorer_id is None and pool.candidates:
        first = pool.candidates[0]
        try:
            backend.score(prompt, first.response)
        except ScoreError as exc:
            raise ScoreError(str(exc), response_id=first.response_id) from exc

    def score_one(idx: int) -> tuple[int, ScoredResponse]:
        cand = pool.candidates[idx]
        sid = backend.scorer_id
        if cache is not None and sid is not None:
            cached = cache.get(sid, thash, pool.instruction_id, cand.response_id)
            if cached is not None:
                return idx, finalize_score(cached, pool.instruction_id, cand.response_id, sid)
        try:
            request = ScoreRequest(prompt=prompt, completion=cand.response)
            raw = backend.score(request.prompt, request.completion)
        except ScoreError as exc:
            raise ScoreError(str(exc), response_id=cand.response_id) from exc
        sid = backend.scorer_id
        if sid is None:
            raise ScoreError("backend did not report a scorer identity", response_id=cand.response_id)
        score = finalize_score(raw, pool.instruction_id, cand.response_id, sid)
        if cache is not None:
            cache.put(sid, thash, pool.instruction_id, cand.response_id, score.answer_token_logprobs)
        return idx, score

    n = len(pool.candidates)
    results: list[ScoredResponse | None] = [None] * n
    if serial or max_inflight <= 1 or n <= 1:
        for i in range(n):
            _, results[i] = score_one(i)
    else:
        with ThreadPoolExecutor(max_workers=max_inflight) as executor:
            for idx, score in executor.map(score_one, range(n)):
                results[idx] = score
    return [r for r in results if r is not None]


def score_to_dict(score: ScoredResponse, template_hash: str) -> dict:
    return {
        "scorer_id": score.scorer_id,
        "instruction_id": score.instruction_id,
        "response_id": score.response_id,
        "template_hash": template_hash,
        "answer_token_logprobs": list(score.answer_token_logprobs),
        "total_logprob": score.total_logprob,
    }


def write_logprob_file(
    scores: Iterable[ScoredResponse],
    path: str | Path,
    template_hash: str,
) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for score in scores:
            fh.write(json.dumps(score_to_dict(score, template_hash), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_logprob_file(path: str | Path) -> list[ScoredResponse]:
    """Read and validate a Logprob File.

    Each record's total_logprob is recomputed from the token logprobs and
    must agree within 1e-9 absolute; any inconsistency is a FormatError
    carrying the line number.
    """
    scores: list[ScoredResponse] = []
    spath = str(path)
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"malformed JSON: {exc.msg}", path=spath, line=line_no) from exc
            missing = [
                k
                for k in ("scorer_id", "instruction_id", "response_id", "template_hash",
                          "answer_token_logprobs", "total_logprob")
                if k not in obj
            ]
            if missing:
                raise FormatError(f"record missing fields {missing}", path=spath, line=line_no)
            raw = obj["answer_token_logprobs"]
            if not isinstance(raw, list) or not raw:
                raise FormatError("answer_token_logprobs must be a nonempty list", path=spath, line=line_no)
            try:
                logprobs = [float(x) for x in raw]
            except (TypeError, ValueError):
                raise FormatError("answer_token_logprobs must be numbers", path=spath, line=line_no)
            if any(not math.isfinite(x) for x in logprobs):
                raise FormatError("non-finite logprob", path=spath, line=line_no)
            total = float(obj["total_logprob"])
            if abs(total - math.fsum(logprobs)) > TOTAL_TOLERANCE:
                raise FormatError(
                    f"total_logprob {total!r} does not match sum of token logprobs",
                    path=spath,
                    line=line_no,
                )
            try:
                scores.append(
                    finalize_score(logprobs, obj["instruction_id"], obj["response_id"], obj["scorer_id"])
                )
            except ScoreError as exc:
                raise FormatError(str(exc), path=spath, line=line_no) from exc
    return scores
