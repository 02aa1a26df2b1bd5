"""On-disk score cache.

Entries are keyed by (scorer_id, template_hash, instruction_id, response_id)
so re-runs — including later selection rounds with a new scorer identity —
only re-score what actually changed. Writes are atomic (write to a temp
file in the same directory, then rename), so concurrent scorers never
observe a torn entry.

Path components are FNV-1a-64 hex digests because scorer ids may contain
characters hostile to filesystems; the full key is stored inside the entry
and checked on read, so a digest collision degrades to a miss.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Sequence

from .hashing import fnv1a_64_hex


class ScoreCache:
    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def _entry_path(self, scorer_id: str, template_hash: str, instruction_id: str, response_id: str) -> Path:
        bucket = fnv1a_64_hex(f"{scorer_id}\x00{template_hash}".encode("utf-8"))
        return self.root / bucket / f"{instruction_id}-{response_id}.json"

    def get(
        self, scorer_id: str, template_hash: str, instruction_id: str, response_id: str
    ) -> list[float] | None:
        path = self._entry_path(scorer_id, template_hash, instruction_id, response_id)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError):
            with self._lock:
                self.misses += 1
            return None
        key = (obj.get("scorer_id"), obj.get("template_hash"), obj.get("instruction_id"), obj.get("response_id"))
        if key != (scorer_id, template_hash, instruction_id, response_id):
            with self._lock:
                self.misses += 1
            return None
        with self._lock:
            self.hits += 1
        return [float(x) for x in obj["answer_token_logprobs"]]

    def put(
        self,
        scorer_id: str,
        template_hash: str,
        instruction_id: str,
        response_id: str,
        logprobs: Sequence[float],
    ) -> None:
        path = self._entry_path(scorer_id, template_hash, instruction_id, response_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "scorer_id": scorer_id,
            "template_hash": template_hash,
            "instruction_id": instruction_id,
            "response_id": response_id,
            "answer_token_logprobs": list(logprobs),
        }
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(payload, fh)
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    def stats(self) -> dict:
        with self._lock:
            return {"hits": self.hits, "misses": self.misses}
