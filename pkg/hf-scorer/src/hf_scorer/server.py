"""Live /v1/score endpoint backed by a loaded causal LM.

Wire contract (the curation pipeline is the client):
    POST /v1/score  {"prompt": str, "completion": str}
    200 -> {"token_logprobs": [float, ...], "n_prompt_tokens": int, "model_id": str}
    400 -> {"error": str} on malformed bodies or empty completions

token_logprobs covers completion tokens only, natural log. Requests may
arrive concurrently; model calls are serialized behind a lock, which keeps
results identical to serial execution (teacher forcing is deterministic
for fixed weights).
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .scoring import ResponseScorer


def make_server(model_id: str, host: str = "127.0.0.1", port: int = 8000,
                scorer: ResponseScorer | None = None) -> ThreadingHTTPServer:
    scorer = scorer or ResponseScorer(model_id)
    lock = threading.Lock()

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _reply(self, status: int, payload: dict) -> None:
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_POST(self):
            if self.path != "/v1/score":
                self._reply(404, {"error": "unknown path"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length).decode("utf-8"))
                prompt = body["prompt"]
                completion = body["completion"]
                if not isinstance(prompt, str) or not isinstance(completion, str):
                    raise ValueError("prompt and completion must be strings")
            except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
                self._reply(400, {"error": f"malformed body: {exc}"})
                return
            if not completion:
                self._reply(400, {"error": "completion must be nonempty"})
                return
            with lock:
                token_logprobs = scorer.response_token_logprobs(prompt, completion)
            n_prompt = len(scorer.tokenizer(prompt)["input_ids"])
            self._reply(
                200,
                {
                    "token_logprobs": token_logprobs,
                    "n_prompt_tokens": n_prompt,
                    "model_id": model_id,
                },
            )

    return ThreadingHTTPServer((host, port), Handler)


def serve(model_id: str, host: str = "127.0.0.1", port: int = 8000) -> None:
    server = make_server(model_id, host, port)
    try:
        server.serve_forever()
    finally:
        server.server_close()
