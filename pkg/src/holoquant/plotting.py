"""PNG figures written next to the CSV outputs of the CLI.

Uses the non-interactive Agg backend; every function takes an output path,
writes one figure and returns the path.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "plot_loss",
    "plot_spectrum",
    "plot_sweep",
    "plot_comparison",
    "plot_latency",
    "plot_r2",
]

_RC = {
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 120,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="png")
    plt.close(fig)
    return path


def plot_loss(history, path, title="training loss"):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        epochs = np.arange(1, len(history) + 1)
        ax.plot(epochs, history, color="k")
        if len(history) and min(history) > 0:
            ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("train MSE")
        ax.set_title(title)
        return _save(fig, path)


def plot_spectrum(reports, path, labels=None):
    """Cumulative variance fraction against rank, one line per report."""
    labels = labels or [("centered" if r.centered else "raw") for r in reports]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for rep, label in zip(reports, labels):
            ranks = np.arange(1, rep.cumulative.size + 1)
            ax.plot(ranks, rep.cumulative, marker="o", label=label)
        ax.axhline(0.94, color="0.6", linestyle="--", linewidth=0.8)
        ax.set_ylim(0.0, 1.02)
        ax.set_xlabel("rank r")
        ax.set_ylabel("cumulative variance")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_sweep(curve, path, xlabel="x", ylabel="y", logy=False, logx=False):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.plot(curve.x, curve.y, marker="o", color="k")
        if logy and min(curve.y) > 0:
            ax.set_yscale("log")
        if logx:
            ax.set_xscale("log", base=2)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        return _save(fig, path)


def plot_r2(curve, path):
    return plot_sweep(curve, path, xlabel="codebook size K", ylabel="R$^2$", logx=True)


def plot_comparison(rows, path):
    """Test MSE of pruning and VQ against the matched bit budget."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        bits = [r.budget_bits for r in rows]
        ax.plot(bits, [r.prune_mse for r in rows], marker="o", label="norm pruning")
        ax.plot(bits, [r.vq_mse for r in rows], marker="s", label="GSB-VQ")
        if rows:
            ax.axhline(rows[0].baseline_mse, color="0.6", linestyle="--", linewidth=0.8, label="dense")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("budget (bits)")
        ax.set_ylabel("test MSE")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_latency(stats, path):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        g = [s.G for s in stats]
        med = np.array([s.median_us for s in stats])
        lo = med - np.array([s.p25_us for s in stats])
        hi = np.array([s.p75_us for s in stats]) - med
        ax.errorbar(g, med, yerr=[lo, hi], marker="o", color="k", capsize=3)
        ax.set_xscale("log", base=2)
        ax.set_ylim(bottom=0)
        ax.set_xlabel("grid size G")
        ax.set_ylabel("median latency (us)")
        return _save(fig, path)
