"""Fixtures: an offline-built tiny causal LM and a pools file from the pipeline.

No network access is assumed anywhere: the model is a small randomly
initialized GPT-2-architecture checkpoint with a byte-level BPE tokenizer
trained on the fixture corpus, saved to disk and loaded through the same
from_pretrained path a published model would use.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys

import pytest
import torch

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")

INSTRUCTIONS = [
    ("name a prime number", ["two is the smallest prime", "seven is prime and odd"]),
    ("what color is the sky", ["the sky is blue at noon", "often blue, sometimes gray"]),
    ("count to three", ["one two three", "1, 2, 3"]),
    ("name a mammal", ["a whale is a mammal", "dogs are mammals"]),
    ("what is water made of", ["hydrogen and oxygen", "two hydrogens per oxygen"]),
    ("name a programming language", ["python is widely used", "people still write c"]),
    ("what season follows winter", ["spring follows winter", "after winter comes spring"]),
    ("name a planet", ["mars is a planet", "venus orbits closer than earth"]),
    ("what do bees make", ["bees make honey", "honey, mostly"]),
    ("name a musical instrument", ["the violin has four strings", "a piano has many keys"]),
]


def fixture_corpus() -> list[str]:
    lines = []
    for instruction, responses in INSTRUCTIONS:
        lines.append(instruction)
        lines.extend(responses)
    return lines


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory) -> str:
    from tokenizers import Tokenizer, decoders, models, pre_tokenizers, trainers
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    out = tmp_path_factory.mktemp("tiny-model")
    tok = Tokenizer(models.BPE(unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(
        vocab_size=384,
        special_tokens=["<unk>", "<pad>"],
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
    )
    tok.train_from_iterator(fixture_corpus() + ["Question: ", "\nAnswer: "], trainer)
    fast = PreTrainedTokenizerFast(tokenizer_object=tok, unk_token="<unk>", pad_token="<pad>")

    config = GPT2Config(
        vocab_size=len(fast),
        n_positions=256,
        n_embd=32,
        n_layer=2,
        n_head=2,
        bos_token_id=0,
        eos_token_id=0,
    )
    torch.manual_seed(1234)
    model = GPT2LMHeadModel(config)
    model.save_pretrained(out)
    fast.save_pretrained(out)
    return str(out)


def run_pipeline_cli(*args: str) -> subprocess.CompletedProcess:
    """Invoke the curation pipeline's CLI (its external interface)."""
    return subprocess.run(
        [sys.executable, "-m", "grape.cli", *args],
        capture_output=True,
        text=True,
    )


@pytest.fixture(scope="session")
def pools_file(tmp_path_factory) -> str:
    """A 20-pair pools file produced by the pipeline's own ingest stage."""
    tmp = tmp_path_factory.mktemp("pools")
    source = tmp / "source.jsonl"
    with open(source, "w", encoding="utf-8") as fh:
        for i, (instruction, responses) in enumerate(INSTRUCTIONS):
            for j, response in enumerate(responses):
                fh.write(
                    json.dumps(
                        {
                            "source_id": f"src{j}",
                            "record_id": f"{i}-{j}",
                            "instruction": instruction,
                            "response": response,
                            "role_tag": "sft",
                            "reward": None,
                        }
                    )
                    + "\n"
                )
    pools = tmp / "pools.jsonl"
    proc = run_pipeline_cli("ingest", "--sources", str(source), "--out", str(pools))
    assert proc.returncode == 0, proc.stderr
    return str(pools)
