"""Scoring backends: where answer-token log-probabilities come from.

A backend maps (prompt, completion) to the completion's per-token natural-log
probabilities. Three are provided:

  - BigramBackend: a deterministic byte-level reference model used in tests
    and offline runs (one token = one byte).
  - HttpScorerBackend: client for the POST /v1/score wire protocol.
  - file mode has no backend object; an exported Logprob File is matched
    against pools directly (see cli.py).

Backends declare concurrency_safe; score_pool serializes calls when False.
"""

from __future__ import annotations

import json
import math
import threading
import time
import urllib.error
import urllib.request
from pathlib import Path
from typing import Protocol, runtime_checkable

from .errors import ConfigError, ScoreError
from .hashing import fnv1a_64_hex

BYTE_ALPHABET = 256


@runtime_checkable
class ScorerBackend(Protocol):
    """Minimal surface the scoring layer needs from a backend."""

    concurrency_safe: bool

    @property
    def scorer_id(self) -> str | None: ...

    def score(self, prompt: str, completion: str) -> list[float]: ...


class BigramBackend:
    """Byte-level bigram model with add-1 (Laplace) smoothing.

    P(b | prev) = (count(prev, b) + 1) / (count(prev) + 256), where
    count(prev) is the number of bigrams starting with prev. Scoring a
    completion conditions its first byte on the last prompt byte; with an
    empty prompt (or an untrained model) the distribution is uniform 1/256.
    """

    concurrency_safe = True

    def __init__(self, scorer_id: str = "bigram:empty") -> None:
        self._scorer_id = scorer_id
        # 256x256 bigram counts plus per-context row sums
        self.bigram_counts = [[0] * BYTE_ALPHABET for _ in range(BYTE_ALPHABET)]
        self.context_counts = [0] * BYTE_ALPHABET
        self.requests_issued = 0

    @property
    def scorer_id(self) -> str | None:
        return self._scorer_id

    @classmethod
    def train(cls, corpus: bytes) -> "BigramBackend":
        if not corpus:
            raise ConfigError("bigram training corpus is empty")
        backend = cls(scorer_id=f"bigram:{fnv1a_64_hex(corpus)}")
        for prev, cur in zip(corpus, corpus[1:]):
            backend.bigram_counts[prev][cur] += 1
            backend.context_counts[prev] += 1
        return backend

    @classmethod
    def train_file(cls, path: str | Path) -> "BigramBackend":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read bigram corpus {path}: {exc}") from exc
        return cls.train(data)

    def logprob(self, prev: int | None, byte: int) -> float:
        if prev is None:
            return math.log(1.0 / BYTE_ALPHABET)
        num = self.bigram_counts[prev][byte] + 1
        den = self.context_counts[prev] + BYTE_ALPHABET
        return math.log(num / den)

    def next_byte_distribution(self, prev: int | None) -> list[float]:
        """Smoothed P(. | prev) over the full byte alphabet (sums to 1)."""
        if prev is None:
            return [1.0 / BYTE_ALPHABET] * BYTE_ALPHABET
        den = self.context_counts[prev] + BYTE_ALPHABET
        return [(self.bigram_counts[prev][b] + 1) / den for b in range(BYTE_ALPHABET)]

    def score(self, prompt: str, completion: str) -> list[float]:
        if not completion:
            raise ScoreError("completion is empty")
        self.requests_issued += 1
        prompt_bytes = prompt.encode("utf-8")
        completion_bytes = completion.encode("utf-8")
        prev: int | None = prompt_bytes[-1] if prompt_bytes else None
        logprobs = []
        for byte in completion_bytes:
            logprobs.append(self.logprob(prev, byte))
            prev = byte
        return logprobs


def train_bigram_backend(corpus: bytes) -> BigramBackend:
    """Train the deterministic byte-level reference backend."""
    return BigramBackend.train(corpus)


class HttpScorerBackend:
    """Client for the /v1/score protocol.

    Request:  POST {"prompt": str, "completion": str} as application/json.
    Response: 200 {"token_logprobs": [float,...], "n_prompt_tokens": int,
              "model_id": str}; token_logprobs covers completion tokens
              only, natural log. Any non-200 status is retryable.

    Retry policy: max_attempts tries with exponential backoff (base
    backoff_base seconds, doubling), then the response fails. model_id
    from the first successful response becomes the scorer identity; a
    different model_id later in the run is an error, because scores are
    only comparable within one scorer.
    """

    concurrency_safe = True

    def __init__(
        self,
        endpoint: str,
        *,
        timeout: float = 30.0,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        sleep=time.sleep,
    ) -> None:
        self.url = self._score_url(endpoint)
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._scorer_id: str | None = None
        self._lock = threading.Lock()
        self.requests_issued = 0

    @staticmethod
    def _score_url(endpoint: str) -> str:
        if endpoint.rstrip("/").endswith("/v1/score"):
            return endpoint.rstrip("/")
        return endpoint.rstrip("/") + "/v1/score"

    @property
    def scorer_id(self) -> str | None:
        return self._scorer_id

    def _record_model_id(self, model_id: str) -> None:
        with self._lock:
            if self._scorer_id is None:
                self._scorer_id = model_id
            elif self._scorer_id != model_id:
                raise ScoreError(
                    f"scorer identity changed mid-run: {self._scorer_id!r} then {model_id!r}"
                )

    def score(self, prompt: str, completion: str) -> list[float]:
        body = json.dumps({"prompt": prompt, "completion": completion}).encode("utf-8")
        last_error = "unknown"
        for attempt in range(1, self.max_attempts + 1):
            if attempt > 1:
                self._sleep(self.backoff_base * (2 ** (attempt - 2)))
            with self._lock:
                self.requests_issued += 1
            req = urllib.request.Request(
                self.url,
                data=body,
                headers={"Content-Type": "application/json"},
                method="POST",
            )
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = resp.read()
            except urllib.error.HTTPError as exc:
                last_error = f"HTTP {exc.code}"
                continue
            except (urllib.error.URLError, TimeoutError, OSError) as exc:
                last_error = f"transport error: {exc}"
                continue
            try:
                obj = json.loads(payload.decode("utf-8"))
                token_logprobs = [float(x) for x in obj["token_logprobs"]]
                model_id = str(obj["model_id"])
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                # a 200 with a malformed body is a server bug, not transient
                raise ScoreError(f"malformed scoring response: {exc}") from exc
            self._record_model_id(model_id)
            return token_logprobs
        raise ScoreError(f"scoring request failed after {self.max_attempts} attempts ({last_error})")
