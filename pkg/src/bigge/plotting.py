"""Figures for training logs, evaluation reports and benchmarks (Agg backend, PNG output)."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .graph import WeightedGraph  # noqa: E402

__all__ = ["plot_training", "plot_eval", "plot_bench"]

STYLE = {
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="png")
    plt.close(fig)
    return path


def plot_training(history: Sequence[dict], path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3))
        ep = [r["epoch"] for r in history]
        ax1.plot(ep, [r["topo_nll"] for r in history], marker=".")
        ax1.set(xlabel="epoch", ylabel="topology NLL per graph")
        ax2.plot(ep, [r["wt_nll"] for r in history], marker=".", color="C1")
        ax2.set(xlabel="epoch", ylabel="weight NLL per graph")
        return _save(fig, path)


def plot_eval(report: dict, generated: Sequence[WeightedGraph], test: Sequence[WeightedGraph],
              path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
        items = [(k, v) for k, v in report["mmd"].items() if isinstance(v, float)]
        ax1.bar(range(len(items)), [v for _, v in items], color="C0")
        ax1.set_xticks(range(len(items)), [k for k, _ in items], rotation=30, ha="right")
        ax1.set_ylabel("squared MMD")
        wg = np.concatenate([g.weights for g in generated]) if generated else np.zeros(0)
        wt = np.concatenate([g.weights for g in test]) if test else np.zeros(0)
        if wg.size or wt.size:
            both = np.concatenate([wg, wt])
            bins = np.linspace(both.min(), both.max(), 40) if both.size and both.max() > both.min() else 20
            ax2.hist(wt, bins=bins, density=True, alpha=0.5, label=f"test ({wt.size})")
            ax2.hist(wg, bins=bins, density=True, alpha=0.5, label=f"generated ({wg.size})")
            ax2.legend(frameon=False)
        ax2.set(xlabel="edge weight", ylabel="density")
        return _save(fig, path)


def plot_bench(rows: Sequence[dict], path: str | Path) -> Path:
    """Sample time, train-step time and peak memory against node count, one line per model."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
        panels = (("sample_s", "sampling time per graph (s)"),
                  ("train_step_s", "train step per graph (s)"),
                  ("peak_rss_mb", "peak resident memory (MB)"))
        for model in sorted({r["model"] for r in rows}):
            sub = sorted((r for r in rows if r["model"] == model), key=lambda r: r["n"])
            for ax, (key, label) in zip(axes, panels):
                ax.plot([r["n"] for r in sub], [r[key] for r in sub], marker="o", label=model)
                ax.set(xscale="log", yscale="log", xlabel="nodes", ylabel=label)
        axes[0].legend(frameon=False)
        return _save(fig, path)
