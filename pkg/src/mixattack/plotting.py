"""Figures for the experiment outputs, rendered off-screen to image files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}
METHOD_LABELS = {"mattack": "M-Attack", "pgd-search": "l1-PGD + search",
                 "pgd-greedy": "l1-PGD + greedy"}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_histogram(table, path) -> Path:
    """Step histograms of log-likelihood, one line per cohort."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        for cohort, counts in table.counts.items():
            ax.stairs(counts, table.edges, label=cohort)
        ax.set_xlabel("KDE log-likelihood")
        ax.set_ylabel("count")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_success(report, path) -> Path:
    """Success rate per budget cell, one panel per lambda."""
    lams = sorted({c["lambda"] for c in report.cells})
    methods = list(dict.fromkeys(c["method"] for c in report.cells))
    budgets = sorted({(c["epsilon1"], c["epsilon2"]) for c in report.cells})
    width = 0.8 / len(methods)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(lams), figsize=(4.0 * len(lams), 3.0), squeeze=False)
        for ax, lam in zip(axes[0], lams):
            x = np.arange(len(budgets))
            for j, m in enumerate(methods):
                rate = [report.cell(m, e1, e2, lam)["success_rate"] for e1, e2 in budgets]
                ax.bar(x + (j - (len(methods) - 1) / 2) * width, rate, width,
                       label=METHOD_LABELS.get(m, m))
            ax.set_xticks(x, [f"{e1:g}/{e2}" for e1, e2 in budgets])
            ax.set_xlabel("eps1 / eps2")
            ax.set_title(f"lambda = {lam:g}")
            ax.set_ylim(0.0, 1.0)
        axes[0][0].set_ylabel("success rate")
        axes[0][0].legend(frameon=False)
        return _save(fig, path)


def plot_tradeoff(rows, path) -> Path:
    """Mean loss against mean M-distance, one curve per method."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for m in dict.fromkeys(r["method"] for r in rows):
            pts = sorted((r["mean_m_distance"], r["mean_loss"]) for r in rows if r["method"] == m)
            d, l = zip(*pts)
            ax.plot(d, l, marker="o", ms=3, label=METHOD_LABELS.get(m, m))
        ax.set_xlabel("mean M-distance")
        ax.set_ylabel("mean loss")
        ax.legend(frameon=False)
        return _save(fig, path)
