"""Figures written next to the TSV reports (Agg backend, no display needed)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_degree_curve(curve, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(curve.degrees, curve.mean_change, marker="o", ms=3)
    ax.set_xlabel("node degree before insertion")
    ax.set_ylabel("mean embedding change (l2)")
    ax.set_title(f"Spearman {curve.spearman():.3f}")
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_sweep(rows, path, metric: str = "hr", N: int = 10) -> None:
    """``rows``: iterable of (alpha, K, value); one line per K."""
    by_k: dict = {}
    for alpha, K, value in rows:
        by_k.setdefault(K, []).append((alpha, value))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for K in sorted(by_k):
        pts = sorted(by_k[K])
        ax.plot([a for a, _ in pts], [v for _, v in pts], marker="o", label=f"K={K}")
    ax.set_xlabel("alpha")
    ax.set_ylabel(f"{metric}@{N}")
    ax.legend()
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_loss_curve(curve, path) -> None:
    """``curve``: (step, loss, val_hr10) rows; HR points are drawn where present."""
    steps = [s for s, _, _ in curve]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(steps, [l for _, l, _ in curve], lw=0.8, color="tab:blue")
    ax.set_xlabel("step")
    ax.set_ylabel("batch loss", color="tab:blue")
    hr = [(s, h) for s, _, h in curve if not math.isnan(h)]
    if hr:
        ax2 = ax.twinx()
        ax2.plot([s for s, _ in hr], [h for _, h in hr], marker="o", color="tab:red")
        ax2.set_ylabel("validation HR@10", color="tab:red")
    _save(fig, path)
