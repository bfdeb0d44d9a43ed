"""Deterministic figure export for the report path.

All figures render through the Agg backend and save as SVG with the creation
date stripped and a fixed hash salt, so identical inputs give byte-identical
files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

matplotlib.rcParams["svg.hashsalt"] = "myofiber"

NOISE_COLOR = "#9e9e9e"


def _palette(n):
    cmap = plt.get_cmap("tab20")
    return [matplotlib.colors.to_hex(cmap(i % 20)) for i in range(n)]


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_label_scatter(coords, labels, path, title="fiber clusters"):
    """2-D scatter of t-SNE coordinates colored by cluster label.

    Noise (-1) renders gray; cluster colors come from a fixed palette so the
    output is deterministic.
    """
    coords = np.asarray(coords, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if len(coords) == 0:
        raise ValueError("nothing to plot: empty input")
    if len(coords) != len(labels):
        raise ValueError("coordinate/label count mismatch")
    cluster_ids = sorted(c for c in np.unique(labels) if c >= 0)
    colors = _palette(len(cluster_ids))
    fig, ax = plt.subplots(figsize=(6, 6))
    noise = labels == -1
    if noise.any():
        ax.scatter(coords[noise, 0], coords[noise, 1], s=8, c=NOISE_COLOR,
                   label="noise", linewidths=0)
    for color, c in zip(colors, cluster_ids):
        sel = labels == c
        ax.scatter(coords[sel, 0], coords[sel, 1], s=8, c=color,
                   label=f"cluster {c}", linewidths=0)
    ax.set_xlabel("t-SNE 1")
    ax.set_ylabel("t-SNE 2")
    ax.set_title(title)
    if len(cluster_ids) <= 12:
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_training_history(history, path, title="training loss"):
    """Train/validation loss curves from a checkpoint history."""
    if not history:
        raise ValueError("empty training history")
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [h["train"] for h in history], label="train")
    ax.plot(epochs, [h["val"] for h in history], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("masked MSE")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_helix_angle_profile(depths, angles, path, oracle=None,
                             title="helix angle vs transmural depth"):
    """Scatter of per-point helix angle against transmural depth, with an
    optional analytic profile overlaid."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(np.asarray(depths), np.asarray(angles), s=4, alpha=0.4,
               linewidths=0, label="fiber points")
    if oracle is not None:
        d, a = oracle
        ax.plot(d, a, "k--", label="analytic rule")
    ax.set_xlabel("transmural depth")
    ax.set_ylabel("helix angle [deg]")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
