"""Render report matrices as heatmap figures next to the CSV/JSON output."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .report import BreakdownMatrix


def _shorten(label: str, limit: int = 24) -> str:
    return label if len(label) <= limit else label[: limit - 3] + "..."


def render_breakdown_heatmap(matrix: BreakdownMatrix, path: str | Path) -> None:
    """Scorer-by-source counts of top-1 choices."""
    counts = np.asarray(matrix.counts, dtype=float)
    fig, ax = plt.subplots(
        figsize=(max(4.0, 0.9 * len(matrix.source_ids) + 2), max(3.0, 0.6 * len(matrix.scorer_ids) + 2))
    )
    im = ax.imshow(counts, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(matrix.source_ids)))
    ax.set_xticklabels([_shorten(s) for s in matrix.source_ids], rotation=45, ha="right")
    ax.set_yticks(range(len(matrix.scorer_ids)))
    ax.set_yticklabels([_shorten(s) for s in matrix.scorer_ids])
    threshold = counts.max() / 2 if counts.size else 0
    for i in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            ax.text(
                j,
                i,
                f"{int(counts[i, j])}",
                ha="center",
                va="center",
                fontsize=8,
                color="white" if counts[i, j] < threshold else "black",
            )
    ax.set_xlabel("source")
    ax.set_ylabel("scorer")
    ax.set_title("top-1 selections by source")
    fig.colorbar(im, ax=ax, label="count")
    fig.tight_layout()
    fig.savefig(path, dpi=150, format="png")
    plt.close(fig)


def render_agreement_heatmap(
    pairwise: Mapping[str, float], scorer_ids: Sequence[str], path: str | Path
) -> None:
    """Symmetric scorer-by-scorer top-1 agreement fractions (diagonal = 1)."""
    n = len(scorer_ids)
    grid = np.eye(n)
    index = {s: i for i, s in enumerate(scorer_ids)}
    for key, value in pairwise.items():
        a, b = key.split("|", 1)
        grid[index[a], index[b]] = value
        grid[index[b], index[a]] = value
    fig, ax = plt.subplots(figsize=(max(3.5, 0.8 * n + 2), max(3.0, 0.8 * n + 1.5)))
    im = ax.imshow(grid, cmap="magma", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(n))
    ax.set_xticklabels([_shorten(s) for s in scorer_ids], rotation=45, ha="right")
    ax.set_yticks(range(n))
    ax.set_yticklabels([_shorten(s) for s in scorer_ids])
    for i in range(n):
        for j in range(n):
            ax.text(
                j,
                i,
                f"{grid[i, j]:.2f}",
                ha="center",
                va="center",
                fontsize=8,
                color="white" if grid[i, j] < 0.5 else "black",
            )
    ax.set_title("pairwise top-1 agreement")
    fig.colorbar(im, ax=ax, label="fraction agreeing")
    fig.tight_layout()
    fig.savefig(path, dpi=150, format="png")
    plt.close(fig)
