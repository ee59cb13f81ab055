"""Figures written next to the CSV reports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FONTSIZE = 9  # pt
COLORS = {"one_pass": "#4c72b0", "one_pass_crf": "#dd8452", "two_pass": "#55a868"}
LABELS = {"one_pass": "One Pass", "one_pass_crf": "One Pass+CRF", "two_pass": "Two Pass"}


def init_plt():
    matplotlib.rcParams.update(
        {
            "font.size": FONTSIZE,
            "axes.titlesize": FONTSIZE,
            "axes.labelsize": FONTSIZE,
            "legend.fontsize": FONTSIZE,
            "xtick.labelsize": FONTSIZE,
            "ytick.labelsize": FONTSIZE,
            "figure.dpi": 100,
            "savefig.dpi": 200,
            "figure.figsize": (4.5, 3.2),
            "axes.spines.top": False,
            "axes.spines.right": False,
        }
    )


def plot_uncoordinated_curves(curves: Mapping[str, Sequence[tuple[int, int]]], path: str | Path) -> Path:
    """Uncoordinated-slot count per epoch, one line per mode."""
    init_plt()
    fig, ax = plt.subplots()
    for mode, points in curves.items():
        epochs, counts = zip(*sorted(points)) if points else ((), ())
        ax.plot(epochs, counts, label=LABELS.get(mode, mode), color=COLORS.get(mode), lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("uncoordinated slots (test)")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_latency(rows: Sequence, path: str | Path) -> Path:
    """Bar chart of mean per-utterance latency; rows are ``bench.SpeedupRow``."""
    init_plt()
    fig, ax = plt.subplots()
    names = [r.label for r in rows]
    xs = range(len(rows))
    bars = ax.bar(xs, [r.latency_ms for r in rows], color=[COLORS.get(n, "0.5") for n in names], width=0.6)
    for bar, r in zip(bars, rows):
        ax.annotate(f"{r.speedup:.2f}x", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=FONTSIZE - 1)
    ax.set_xticks(list(xs))
    ax.set_xticklabels([LABELS.get(n, n) for n in names])
    ax.set_ylabel("ms / utterance")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
