"""Causal-LM adapter for the curation pipeline.

Computes per-token conditional log-probabilities of candidate responses
under a real causal language model (teacher-forced, natural log) and
writes the pipeline's Logprob File format; can also serve the pipeline's
POST /v1/score protocol live.
"""

__version__ = "0.1.0"
