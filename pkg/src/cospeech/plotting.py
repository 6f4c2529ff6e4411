"""Matplotlib figure output for the training and report paths."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_loss_curves(history: list[dict], path) -> None:
    """Per-epoch loss terms on a log scale."""
    if not history:
        return
    keys = [k for k in history[0] if k != "epoch"]
    epochs = [row["epoch"] for row in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in keys:
        ax.plot(epochs, [row[key] for row in history], label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_bars(values: dict[str, float], path, title: str = "evaluation") -> None:
    names = list(values)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(names, [values[n] for n in names], color="#4878cf")
    ax.set_title(title)
    for i, name in enumerate(names):
        ax.text(i, values[name], f"{values[name]:.3g}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
