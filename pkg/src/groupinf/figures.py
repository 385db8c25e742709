"""Matplotlib renderings of the benchmark reports.

Each report path writes a PNG next to its CSV output: an
estimate-vs-truth scatter for attribution, loss and entropy curves for
selection, and a heatmap for the class-pair interaction matrix.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg", force=True)

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .oracle import BenchmarkReport, SelectionReport  # noqa: E402

_METHOD_STYLE = {
    "random": dict(color="tab:gray", marker="o"),
    "top_k_first_order": dict(color="tab:red", marker="s"),
    "greedy_interaction": dict(color="tab:blue", marker="D"),
}


def attribution_figure(report: BenchmarkReport, outdir: str) -> Path:
    truths = np.array([r.truth for r in report.records])
    firsts = np.array([r.first_order for r in report.records])
    totals = np.array([r.total for r in report.records])
    fig, axes = plt.subplots(1, 2, figsize=(9, 4), sharey=True)
    panels = [("first-order", firsts, report.rho_first_order),
              ("interaction-aware", totals, report.rho_interaction_aware)]
    for ax, (label, est, rho) in zip(axes, panels):
        ax.scatter(est, truths, s=18, alpha=0.75, color="tab:blue", edgecolor="none")
        lo = min(est.min(), truths.min())
        hi = max(est.max(), truths.max())
        ax.plot([lo, hi], [lo, hi], ls="--", lw=1, color="gray")
        ax.set_xlabel(f"{label} estimate")
        ax.set_title(f"{label} (Spearman rho = {rho:.3f})")
    axes[0].set_ylabel("retraining ground truth")
    fig.tight_layout()
    path = Path(outdir) / "attribution_scatter.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def selection_figure(report: SelectionReport, outdir: str) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    methods = sorted({r.method for r in report.records})
    for method in methods:
        rows = sorted((r for r in report.records if r.method == method),
                      key=lambda r: r.budget)
        budgets = [r.budget for r in rows]
        style = _METHOD_STYLE.get(method, {})
        loss = np.array([r.loss_mean for r in rows])
        std = np.array([r.loss_std for r in rows])
        axes[0].plot(budgets, loss, label=method, **style)
        axes[0].fill_between(budgets, loss - std, loss + std, alpha=0.15,
                             color=style.get("color"))
        axes[1].plot(budgets, [r.entropy_mean for r in rows], label=method, **style)
    axes[0].set_xlabel("budget")
    axes[0].set_ylabel("retrained test loss")
    axes[1].set_xlabel("budget")
    axes[1].set_ylabel("class entropy (nats)")
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    path = Path(outdir) / "selection_curves.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def kappa_figure(matrix: np.ndarray, outdir: str) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(matrix, cmap="coolwarm")
    fig.colorbar(im, ax=ax, label="mean pairwise interaction")
    ax.set_xlabel("class")
    ax.set_ylabel("class")
    ax.set_title("class-pair mean interaction")
    fig.tight_layout()
    path = Path(outdir) / "kappa_matrix.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
