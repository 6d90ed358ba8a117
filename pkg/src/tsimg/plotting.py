"""Figures written next to the CSV outputs of the CLI. Uses the Agg backend only."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    _pyplot().close(fig)
    return path


def plot_loss_curve(epochs, losses, path) -> Path:
    """Mean training loss per epoch on a log scale."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.asarray(epochs), np.asarray(losses), lw=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_marginals(edges, real_hist, synth_hist, path, title: str | None = None) -> Path:
    """Overlay of the pooled value histograms; ``*_hist`` are per-bin probabilities."""
    plt = _pyplot()
    edges = np.asarray(edges)
    width = np.diff(edges)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(edges[:-1], np.asarray(real_hist) / width, width=width, align="edge", alpha=0.5, label="real")
    ax.bar(edges[:-1], np.asarray(synth_hist) / width, width=width, align="edge", alpha=0.5, label="synthetic")
    ax.set_xlabel("value")
    ax.set_ylabel("density")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_series(batch, path, max_series: int = 6) -> Path:
    """One panel per series, one line per feature."""
    plt = _pyplot()
    batch = np.asarray(batch)
    n = max(1, min(len(batch), max_series))
    fig, axes = plt.subplots(n, 1, figsize=(5, 1.4 * n + 0.4), sharex=True, squeeze=False)
    for ax, series in zip(axes[:, 0], batch[:n]):
        ax.plot(series, lw=1.0)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("t")
    return _save(fig, path)
