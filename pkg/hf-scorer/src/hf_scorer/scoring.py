"""Teacher-forced response scoring under a causal LM.

Response-token boundary rule: tokenize the prompt alone and the
prompt+response together; the response tokens are the tail of the combined
encoding past the prompt length. Tokenizers may merge across the boundary,
so the tail is defined by length difference, not by re-encoding the
response. Both encodings use the tokenizer's default special-token
behavior; the choice is recorded in the output manifest.

The per-token log-probability of token t is log_softmax(logits[t-1])[t]
over the combined sequence: the model's conditional probability of each
response token given everything before it. No sampling happens anywhere.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

from .hashing import fnv1a_64_hex

DEFAULT_TEMPLATE = "Question: {instruction}\nAnswer: "


@dataclass
class ScoreJob:
    model_id: str
    pools_path: str
    output_path: str
    template_path: str | None = None
    batch_size: int = 8
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class ResponseScorer:
    """A loaded model + tokenizer that scores (prompt, response) pairs."""

    def __init__(self, model_id: str, device: str = "cpu"):
        self.model_id = model_id
        self.device = torch.device(device)
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        self.model = AutoModelForCausalLM.from_pretrained(model_id)
        self.model.to(self.device)
        self.model.eval()
        if self.tokenizer.pad_token_id is None:
            # padding only fills batch tails; masked positions never score
            self.tokenizer.pad_token = self.tokenizer.eos_token or "<pad>"

    def response_token_logprobs(self, prompt: str, response: str) -> list[float]:
        """Natural-log probabilities of the response tokens, one pass."""
        return self.score_batch([(prompt, response)])[0]

    def score_batch(self, pairs: list[tuple[str, str]]) -> list[list[float]]:
        """Score a batch; element i is the response-token logprobs of pair i.

        A pair whose response contributes zero tokens yields an empty list;
        callers decide whether that is an error.
        """
        prompt_lens = []
        full_ids = []
        for prompt, response in pairs:
            ids_prompt = self.tokenizer(prompt)["input_ids"]
            ids_full = self.tokenizer(prompt + response)["input_ids"]
            prompt_lens.append(len(ids_prompt))
            full_ids.append(ids_full)

        max_len = max(len(ids) for ids in full_ids)
        pad_id = self.tokenizer.pad_token_id or 0
        batch = torch.full((len(pairs), max_len), pad_id, dtype=torch.long)
        mask = torch.zeros((len(pairs), max_len), dtype=torch.long)
        for i, ids in enumerate(full_ids):
            batch[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            mask[i, : len(ids)] = 1

        with torch.no_grad():
            logits = self.model(
                input_ids=batch.to(self.device), attention_mask=mask.to(self.device)
            ).logits.float()
        logprobs = torch.log_softmax(logits, dim=-1).cpu()

        out: list[list[float]] = []
        for i, ids in enumerate(full_ids):
            start = max(prompt_lens[i], 1)  # token 0 has no conditioning context
            token_lps = [
                logprobs[i, pos - 1, ids[pos]].item() for pos in range(start, len(ids))
            ]
            out.append(token_lps)
        return out


def load_template(path: str | None) -> str:
    if path is None:
        return DEFAULT_TEMPLATE
    text = Path(path).read_text(encoding="utf-8")
    if "{instruction}" not in text:
        raise ValueError("template must contain an {instruction} placeholder")
    return text


def render(template: str, instruction: str) -> str:
    return template.replace("{instruction}", instruction)


def read_pools(path: str) -> list[dict]:
    pools = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                pools.append(json.loads(line))
    return pools


def score_file(job: ScoreJob) -> dict:
    """Score every (instruction, response) in a pools file.

    Writes the Logprob File to job.output_path, an errors sidecar for
    record-level failures (run continues), and a manifest sidecar recording
    the scoring choices. Returns the manifest.
    """
    scorer = ResponseScorer(job.model_id, device=job.device)
    template = load_template(job.template_path)
    template_hash = fnv1a_64_hex(template.encode("utf-8"))
    pools = read_pools(job.pools_path)

    work = []
    for pool in pools:
        prompt = render(template, pool["instruction"])
        for cand in pool["candidates"]:
            work.append((pool["instruction_id"], cand["response_id"], prompt, cand["response"]))

    n_written = 0
    errors = []
    with open(job.output_path, "w", encoding="utf-8") as out:
        for lo in range(0, len(work), job.batch_size):
            chunk = work[lo : lo + job.batch_size]
            results = scorer.score_batch([(prompt, resp) for _, _, prompt, resp in chunk])
            for (iid, rid, _prompt, _resp), token_lps in zip(chunk, results):
                if not token_lps:
                    errors.append(
                        {"instruction_id": iid, "response_id": rid, "error": "zero response tokens"}
                    )
                    continue
                if any(not math.isfinite(x) for x in token_lps):
                    errors.append(
                        {"instruction_id": iid, "response_id": rid, "error": "non-finite logprob"}
                    )
                    continue
                record = {
                    "scorer_id": job.model_id,
                    "instruction_id": iid,
                    "response_id": rid,
                    "template_hash": template_hash,
                    "answer_token_logprobs": token_lps,
                    "total_logprob": math.fsum(token_lps),
                }
                out.write(json.dumps(record, ensure_ascii=False) + "\n")
                n_written += 1

    if errors:
        with open(job.output_path + ".errors.jsonl", "w", encoding="utf-8") as fh:
            for err in errors:
                fh.write(json.dumps(err, ensure_ascii=False) + "\n")

    manifest = {
        "model_id": job.model_id,
        "template_hash": template_hash,
        "add_special_tokens": "default",  # tokenizer default, incl. BOS if the model has one
        "batch_size": job.batch_size,
        "device": str(job.device),
        "records": n_written,
        "errors": len(errors),
    }
    with open(job.output_path + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
