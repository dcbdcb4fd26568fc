"""Figures written next to the CSV reports."""
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

BLUE = "#2166ac"
RED = "#b2182b"
GREY = "#777777"


def set_style(fontsize=10):
    plt.rcParams.update({
        "font.size": fontsize,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "savefig.dpi": 150,
        "figure.figsize": (4.8, 3.4),
    })


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_entropy(report, path):
    """Mean per-puzzle entropy against the uniform baseline (bits)."""
    set_style()
    rows = np.array([r[:7] for r in report.entropy_by_length], dtype=float)
    fig, ax = plt.subplots()
    ax.plot(rows[:, 0], rows[:, 4], "o-", color=BLUE, label="puzzles")
    ax.plot(rows[:, 0], rows[:, 5], "s--", color=RED, label="uniform")
    ax.axhline(math.log2(report.k), color=GREY, lw=0.8, ls=":", label=f"log2 k = {math.log2(report.k):.0f}")
    ax.set_xlabel("tokens per puzzle (n)")
    ax.set_ylabel("entropy (bits)")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_zipf(report, path):
    set_style()
    rank = np.array([r[0] for r in report.zipf], dtype=float)
    freq = np.array([r[1] for r in report.zipf], dtype=float)
    fig, ax = plt.subplots()
    ax.loglog(rank, freq, ".", color=BLUE, ms=3, label=f"tokens (slope {report.zipf_slope:.2f})")
    ax.loglog(rank, freq[0] / rank, color=RED, lw=1, label="1 / rank")
    ax.set_xlabel("rank")
    ax.set_ylabel("frequency")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_heaps(report, path):
    set_style()
    n = np.array([r[0] for r in report.heaps], dtype=float)
    u = np.array([r[1] for r in report.heaps], dtype=float)
    fig, ax = plt.subplots()
    ax.loglog(n, u, "o-", color=BLUE, ms=3, label=f"tokens (beta {report.heaps_beta:.2f})")
    ax.loglog(n, np.sqrt(n), color=RED, lw=1, ls="--", label="n^0.5")
    ax.set_xlabel("stream length n")
    ax.set_ylabel("distinct tokens")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_report(report, out_dir):
    out = Path(out_dir)
    return [plot_entropy(report, out / "entropy.png"),
            plot_zipf(report, out / "zipf.png"),
            plot_heaps(report, out / "heaps.png")]


def plot_solution(shuffled, solved, path, wrong=None, grid_side=None, title=None):
    """Shuffled input next to the reassembly; ``wrong`` grid cells get a red frame."""
    set_style()
    fig, axes = plt.subplots(1, 2, figsize=(6.4, 3.4))
    for ax, img, name in zip(axes, (shuffled, solved), ("input", "solved")):
        ax.imshow(np.clip(img, 0, 1), interpolation="nearest")
        ax.set_title(name)
        ax.set_xticks([])
        ax.set_yticks([])
    if wrong and grid_side:
        s = solved.shape[0] / grid_side
        for q in wrong:
            r, c = divmod(int(q), grid_side)
            axes[1].add_patch(plt.Rectangle((c * s - 0.5, r * s - 0.5), s, s, fill=False,
                                            edgecolor="red", lw=2))
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_training(log_rows, path):
    set_style()
    steps = [r["step"] for r in log_rows]
    fig, ax = plt.subplots()
    ax.plot(steps, [r["loss"] for r in log_rows], color=BLUE)
    ax.set_xlabel("step")
    ax.set_ylabel("cross-entropy")
    return _save(fig, path)
