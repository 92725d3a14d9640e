"""Plot rendering for evaluation reports.

Plots are side artifacts only; every number that matters is in the JSON
reports.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .datasets import BinaryLabel

__all__ = ["scatter_fit_plot", "class_histogram_plot", "score_histogram_plot"]


def scatter_fit_plot(
    predicted,
    reference,
    slope: float,
    intercept: float,
    r2: float,
    path: str | Path,
) -> None:
    """Inferred-vs-reference scatter with the least-squares line."""
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.scatter(predicted, reference, s=12, alpha=0.6, label="test images")
    xs = np.linspace(min(predicted), max(predicted), 50)
    ax.plot(xs, slope * xs + intercept, "r-", label=f"fit (R$^2$={r2:.2f})")
    ax.plot([1, 10], [1, 10], "k--", linewidth=0.8, label="identity")
    ax.set_xlabel("inferred quality score")
    ax.set_ylabel("reference quality score")
    ax.set_xlim(0.5, 10.5)
    ax.set_ylim(0.5, 10.5)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def class_histogram_plot(scores, labels, path: str | Path) -> None:
    """Per-class score histograms for binary external evaluation."""
    scores = np.asarray(scores, dtype=float)
    fig, ax = plt.subplots(figsize=(7, 4))
    bins = np.arange(1.0, 10.51, 0.5)
    for label, color in ((BinaryLabel.GOOD, "tab:green"), (BinaryLabel.POOR, "tab:red")):
        vals = scores[[lab == label for lab in labels]]
        if vals.size:
            ax.hist(vals, bins=bins, alpha=0.6, color=color, label=label.value)
    ax.set_xlabel("inferred quality score")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def score_histogram_plot(scores, path: str | Path, title: str = "") -> None:
    """Distribution of a score collection (e.g. pseudo-labels)."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(np.asarray(scores, dtype=float), bins=np.arange(1.0, 10.51, 0.25))
    ax.set_xlabel("quality score")
    ax.set_ylabel("count")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
