"""Matplotlib figure rendering next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 150


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def render_method_figures(fig_dir: Path, summary: dict, results=None) -> list[Path]:
    """Accuracy/F1 curves, EA-ratio curve, and a forgetting chart if recorded."""
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []
    method = summary["method"]
    rounds = summary["rounds"]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    for curve in summary["accuracy_curves"]:
        ax1.plot(rounds, curve, color="tab:blue", alpha=0.25, lw=0.8)
    ax1.plot(rounds, summary["accuracy_curve_mean"], color="tab:blue", lw=1.8,
             label=f"{method} (mean)")
    ax1.set_xlabel("round")
    ax1.set_ylabel("test accuracy")
    ax1.legend(loc="lower right", fontsize=8)
    seeds = summary["seeds"]
    finals = summary["final_accuracy_per_seed"]
    ax2.bar([str(s) for s in seeds], finals, color="tab:blue", alpha=0.8)
    ax2.axhline(summary["accuracy_mean"], color="k", ls="--", lw=1,
                label=f"mean {summary['accuracy_mean']:.3f}")
    ax2.set_xlabel("seed")
    ax2.set_ylabel("final accuracy")
    ax2.legend(fontsize=8)
    path = fig_dir / "accuracy.png"
    _save(fig, path)
    written.append(path)

    ea = summary.get("ea", {})
    if ea.get("rounds"):
        fig, ax = plt.subplots(figsize=(5.5, 3.4))
        for curve in ea["curves"]:
            pts = [(r, v) for r, v in zip(ea["rounds"], curve) if v is not None]
            if pts:
                ax.plot(*zip(*pts), color="tab:red", alpha=0.35, lw=0.9)
        ax.set_xlabel("round")
        ax.set_ylabel("mean client EA ratio")
        ax.set_yscale("log")
        ax.set_title(f"{method}: error-asymmetry ratio of active clients", fontsize=9)
        path = fig_dir / "ea_ratio.png"
        _save(fig, path)
        written.append(path)

    pre_post = []
    for result in results or []:
        pre_post.extend(result.pre_post)
    if pre_post:
        c = len(pre_post[0].pre)
        pre = np.nanmean(np.array([r.pre for r in pre_post]), axis=0)
        post = np.nanmean(np.array([r.post for r in pre_post]), axis=0)
        fig, ax = plt.subplots(figsize=(5.5, 3.4))
        x = np.arange(c)
        ax.bar(x - 0.2, pre, width=0.4, label="before local training")
        ax.bar(x + 0.2, post, width=0.4, label="after local training")
        ax.set_xticks(x)
        ax.set_xlabel("class")
        ax.set_ylabel("test accuracy")
        ax.set_title(f"{method}: class accuracy around local training", fontsize=9)
        ax.legend(fontsize=8)
        path = fig_dir / "pre_post.png"
        _save(fig, path)
        written.append(path)
    return written


def render_compare_figure(path: Path, summary_a: dict, summary_b: dict) -> Path:
    """Overlayed mean accuracy curves with a min-max band per method."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 3.8))
    for summary, color in ((summary_a, "tab:blue"), (summary_b, "tab:green")):
        rounds = summary["rounds"]
        curves = np.array(summary["accuracy_curves"])
        ax.fill_between(rounds, curves.min(axis=0), curves.max(axis=0),
                        color=color, alpha=0.15)
        ax.plot(rounds, summary["accuracy_curve_mean"], color=color, lw=1.8,
                label=summary["method"])
    ax.set_xlabel("round")
    ax.set_ylabel("test accuracy")
    ax.legend(loc="lower right", fontsize=9)
    _save(fig, path)
    return path
