"""Report figures rendered to files (headless backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STRATEGY_COLORS = {"NoTE": "#d62728", "TE": "#ff7f0e", "PDLC": "#1f77b4"}


def _color_for(label: str):
    for key, color in STRATEGY_COLORS.items():
        if label.startswith(key):
            return color
    return None


def save_overlay(path, demonstration: np.ndarray, traces: dict[str, np.ndarray],
                 dim: int, title: str) -> None:
    """Plot commanded trajectories for one dimension over the demonstration."""
    fig, ax = plt.subplots(figsize=(9, 4))
    ticks = np.arange(demonstration.shape[0])
    ax.plot(ticks, demonstration, color="black", linestyle="--", linewidth=1.2,
            label="demonstration")
    for label, commanded in traces.items():
        ax.plot(np.arange(commanded.shape[0]), commanded, linewidth=1.0,
                label=label, color=_color_for(label))
    ax.set_xlabel("tick")
    ax.set_ylabel(f"dim_{dim}")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=110)
    plt.close(fig)


def save_metric_bars(path, means: dict[str, float], metric_label: str,
                     title: str) -> None:
    """Bar chart of a per-strategy mean metric."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    labels = list(means)
    values = [means[s] for s in labels]
    colors = [_color_for(s) or "#7f7f7f" for s in labels]
    ax.bar(labels, values, color=colors)
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.3g}", ha="center", va="bottom", fontsize=8)
    ax.set_ylabel(metric_label)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=110)
    plt.close(fig)
