"""Shared test helpers: JSONL writers, synthetic corpora, mock score server."""

from __future__ import annotations

import json
import random
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return str(path)


def source_record(source_id, record_id, instruction, response, role_tag="sft", reward=None):
    return {
        "source_id": source_id,
        "record_id": record_id,
        "instruction": instruction,
        "response": response,
        "role_tag": role_tag,
        "reward": reward,
    }


def synthetic_corpus(n_instructions=100, seed=1234, sources=("alpha", "beta", "gamma")):
    """Deterministic multi-source corpus where every instruction overlaps."""
    rng = random.Random(seed)
    words = "solve compute explain list derive prove count sort merge find".split()
    files = {src: [] for src in sources}
    for i in range(n_instructions):
        instruction = f"{rng.choice(words)} task {i}: {rng.choice(words)} the {rng.choice(words)}"
        n_resp = rng.randint(2, len(sources))
        chosen_sources = rng.sample(sources, n_resp)
        for j, src in enumerate(chosen_sources):
            role = rng.choice(["sft", "preference_winner", "generated"])
            response = (
                f"answer {i}-{j} from {src}: " + " ".join(rng.choice(words) for _ in range(rng.randint(3, 12)))
            )
            files[src].append(
                source_record(src, f"{src}-{i}-{j}", instruction, response, role_tag=role, reward=rng.random())
            )
    return files


def reference_logprobs(completion: str) -> list[float]:
    """The mock server's deterministic per-character scoring rule."""
    return [-(ord(c) % 5 + 1) / 10.0 for c in completion]


class MockScoreServer:
    """In-process /v1/score server with failure and latency injection.

    behavior keys:
      fail_first: dict completion -> number of initial attempts to 500
      always_fail: set of completions that always 500
      delay_for: dict completion -> seconds to sleep before answering
      model_id: reported scorer identity (callable or str)
    """

    def __init__(self):
        self.requests = []
        self.lock = threading.Lock()
        self.fail_first: dict[str, int] = {}
        self.always_fail: set[str] = set()
        self.delay_for: dict[str, float] = {}
        self.model_id = "mock-model-v1"
        self._attempts: dict[str, int] = {}

        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # quiet
                pass

            def do_POST(self):
                if self.path != "/v1/score":
                    self.send_error(404)
                    return
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    body = json.loads(self.rfile.read(length).decode("utf-8"))
                    prompt = body["prompt"]
                    completion = body["completion"]
                except Exception:
                    self._reply(400, {"error": "malformed body"})
                    return
                if not isinstance(completion, str) or not completion:
                    self._reply(400, {"error": "completion must be a nonempty string"})
                    return
                with server.lock:
                    server.requests.append(completion)
                    attempt = server._attempts.get(completion, 0) + 1
                    server._attempts[completion] = attempt
                if completion in server.always_fail or attempt <= server.fail_first.get(completion, 0):
                    self._reply(500, {"error": "injected failure"})
                    return
                delay = server.delay_for.get(completion, 0.0)
                if delay:
                    time.sleep(delay)
                model = server.model_id(completion) if callable(server.model_id) else server.model_id
                self._reply(
                    200,
                    {
                        "token_logprobs": reference_logprobs(completion),
                        "n_prompt_tokens": len(prompt),
                        "model_id": model,
                    },
                )

            def _reply(self, status, payload):
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self.thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()
