import json
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor

import pytest

from hf_scorer.scoring import ResponseScorer
from hf_scorer.server import make_server


@pytest.fixture(scope="module")
def live_server(tiny_model_dir):
    scorer = ResponseScorer(tiny_model_dir)
    server = make_server(tiny_model_dir, host="127.0.0.1", port=0, scorer=scorer)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address[:2]
    yield f"http://{host}:{port}", scorer, tiny_model_dir
    server.shutdown()
    server.server_close()


def post(url, payload, raw=None):
    data = raw if raw is not None else json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(
        url + "/v1/score", data=data, headers={"Content-Type": "application/json"}, method="POST"
    )
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            return resp.status, json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read().decode("utf-8"))


class TestWireContract:
    def test_schema_conformance(self, live_server):
        url, scorer, model_id = live_server
        status, body = post(url, {"prompt": "Question: hi\nAnswer: ", "completion": "hello there"})
        assert status == 200
        assert set(body) == {"token_logprobs", "n_prompt_tokens", "model_id"}
        assert body["model_id"] == model_id
        assert isinstance(body["n_prompt_tokens"], int)
        assert body["token_logprobs"] and all(isinstance(x, float) for x in body["token_logprobs"])
        # completion tokens only
        n_full = len(scorer.tokenizer("Question: hi\nAnswer: " + "hello there")["input_ids"])
        assert len(body["token_logprobs"]) == n_full - body["n_prompt_tokens"]

    def test_empty_completion_rejected(self, live_server):
        url, _, _ = live_server
        status, body = post(url, {"prompt": "p", "completion": ""})
        assert status == 400
        assert "error" in body

    def test_malformed_body_rejected(self, live_server):
        url, _, _ = live_server
        status, body = post(url, None, raw=b"{not json")
        assert status == 400
        status, body = post(url, {"prompt": "p"})
        assert status == 400

    def test_unknown_path_404(self, live_server):
        url, _, _ = live_server
        req = urllib.request.Request(url + "/v2/other", data=b"{}", method="POST")
        with pytest.raises(urllib.error.HTTPError) as err:
            urllib.request.urlopen(req, timeout=10)
        assert err.value.code == 404

    def test_concurrent_equals_serial(self, live_server):
        url, _, _ = live_server
        payloads = [
            {"prompt": "Question: q\nAnswer: ", "completion": f"reply number {i} with words"}
            for i in range(8)
        ]
        serial = [post(url, p)[1]["token_logprobs"] for p in payloads]
        with ThreadPoolExecutor(max_workers=8) as pool:
            concurrent = list(pool.map(lambda p: post(url, p)[1]["token_logprobs"], payloads))
        assert concurrent == serial

    def test_agrees_with_file_mode_scoring(self, live_server):
        url, scorer, _ = live_server
        prompt, completion = "Question: name a mammal\nAnswer: ", "a whale is a mammal"
        _, body = post(url, {"prompt": prompt, "completion": completion})
        offline = scorer.response_token_logprobs(prompt, completion)
        assert body["token_logprobs"] == pytest.approx(offline, abs=1e-5)
