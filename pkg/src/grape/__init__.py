"""Response-level curation for supervised fine-tuning corpora.

Pools candidate responses per instruction from many JSONL sources, scores
each candidate under a target base model (length-normalized log-probability
/ perplexity), selects the best-aligned responses, and emits analysis
artifacts: per-source selection breakdowns, subset-KL optimality reports,
and a cost model for competing selection methods.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    CostError,
    DistError,
    ExportError,
    FormatError,
    GrapeError,
    IngestError,
    ReportError,
    ScoreError,
    SelectError,
)

__all__ = [
    "__version__",
    "GrapeError",
    "IngestError",
    "ScoreError",
    "SelectError",
    "ExportError",
    "DistError",
    "CostError",
    "ReportError",
    "ConfigError",
    "FormatError",
]
