"""Figure rendering for evaluation reports and training histories.

All functions write PNG files and never open interactive windows; the
Agg backend is forced so they work in headless environments.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def save_regime_bars(results, path: str, title: str = "Attachment scores") -> str:
    """Grouped UAS/LAS bars, one group per regime.

    ``results`` maps regime name to an object with ``uas`` and ``las``
    fraction properties (see evaluation.Metrics).
    """
    if not results:
        raise ValueError("no results to plot")
    names = list(results)
    uas = [100.0 * results[name].uas for name in names]
    las = [100.0 * results[name].las for name in names]
    x = range(len(names))
    width = 0.38
    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * len(names), 3.6))
    bars_u = ax.bar([i - width / 2 for i in x], uas, width, label="UAS", color="#4878a8")
    bars_l = ax.bar([i + width / 2 for i in x], las, width, label="LAS", color="#d1894b")
    for bars in (bars_u, bars_l):
        for bar in bars:
            ax.annotate(
                f"{bar.get_height():.1f}",
                (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                ha="center", va="bottom", fontsize=8,
            )
    ax.set_xticks(list(x))
    ax.set_xticklabels(names)
    ax.set_ylabel("score (%)")
    ax.set_ylim(0, 105)
    ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_training_curves(histories, path: str) -> str:
    """Per-epoch train loss and dev LAS, one line per named run.

    ``histories`` maps run name to a list of records with ``epoch``,
    ``train_loss`` and ``dev_las`` attributes (see trainer.EpochRecord).
    """
    if not histories:
        raise ValueError("no histories to plot")
    fig, (ax_loss, ax_las) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for name, history in histories.items():
        if not history:
            continue
        epochs = [rec.epoch for rec in history]
        ax_loss.plot(epochs, [rec.train_loss for rec in history], label=name)
        ax_las.plot(epochs, [100.0 * rec.dev_las for rec in history], label=name)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_loss.set_title("Training loss")
    ax_las.set_xlabel("epoch")
    ax_las.set_ylabel("dev LAS (%)")
    ax_las.set_title("Development LAS")
    for ax in (ax_loss, ax_las):
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
