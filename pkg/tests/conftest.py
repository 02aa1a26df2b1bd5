"""Fixtures wrapping the shared helpers in tests/helpers.py."""

import pytest

from helpers import MockScoreServer, synthetic_corpus, write_jsonl


@pytest.fixture
def jsonl_writer(tmp_path):
    def _write(name, records):
        return write_jsonl(tmp_path / name, records)

    return _write


@pytest.fixture
def synthetic_sources(tmp_path):
    def _build(n_instructions=100, seed=1234):
        files = synthetic_corpus(n_instructions=n_instructions, seed=seed)
        return [write_jsonl(tmp_path / f"{src}.jsonl", recs) for src, recs in files.items()]

    return _build


@pytest.fixture
def mock_server():
    server = MockScoreServer().start()
    yield server
    server.stop()
