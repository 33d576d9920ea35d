"""Matplotlib renderings of the report CSVs, written next to them."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import MetricReport
from .training import LossReport


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_loss(history: list[LossReport], path: str | Path) -> Path:
    """Ranking, partition, and joint loss against iteration."""
    fig, ax = plt.subplots(figsize=(6, 4))
    it = [h.iteration for h in history]
    ax.plot(it, [h.ranking for h in history], label="ranking", lw=1.2)
    ax.plot(it, [h.partition for h in history], label="partition", lw=1.2)
    ax.plot(it, [h.joint for h in history], label="joint", lw=1.2, color="k")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_roc(report: MetricReport, path: str | Path) -> Path:
    """Full ROC curve on a log FAR axis, with the reported operating points."""
    fig, ax = plt.subplots(figsize=(5, 4))
    if report.roc_curve is not None:
        far, tar = report.roc_curve
        ax.plot(far, tar, lw=1.5)
    if report.tar_at_far:
        pts = sorted(report.tar_at_far.items())
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o", color="crimson")
    ax.set_xscale("log")
    ax.set_xlabel("false accept rate")
    ax.set_ylabel("true accept rate")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3, which="both")
    return _save(fig, path)


def plot_cmc(report: MetricReport, path: str | Path) -> Path:
    """Cumulative match curve over gallery ranks."""
    fig, ax = plt.subplots(figsize=(5, 4))
    if report.cmc_curve is not None:
        ranks, rates = report.cmc_curve
        ax.plot(ranks, rates, lw=1.5, marker=".", ms=4)
    ax.set_xlabel("rank")
    ax.set_ylabel("identification rate")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    return _save(fig, path)
