"""hf-scorer command line: score a pools file offline or serve /v1/score."""

from __future__ import annotations

import argparse
import logging
import sys

from .scoring import ScoreJob, score_file
from .server import serve

log = logging.getLogger("hf_scorer")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hf-scorer",
        description="Per-token response log-probabilities under a causal LM.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score a pools JSONL file into a Logprob File")
    p.add_argument("--model", required=True, help="model name or local model directory")
    p.add_argument("--pools", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--template", default=None)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--device", default="cpu")

    p = sub.add_parser("serve", help="serve POST /v1/score for the given model")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO)
    args = build_parser().parse_args(argv)
    if args.command == "score":
        manifest = score_file(
            ScoreJob(
                model_id=args.model,
                pools_path=args.pools,
                output_path=args.out,
                template_path=args.template,
                batch_size=args.batch_size,
                device=args.device,
            )
        )
        log.info("wrote %d records (%d errors) to %s", manifest["records"], manifest["errors"], args.out)
        return 0 if manifest["records"] else 1
    if args.command == "serve":
        log.info("serving %s on %s:%d", args.model, args.host, args.port)
        serve(args.model, args.host, args.port)
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
