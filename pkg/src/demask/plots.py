"""Optional matplotlib figure rendering for report-producing commands.

Figures are always written to files (never shown); matplotlib is imported
lazily with the Agg backend so headless use never touches a display.
"""

from __future__ import annotations

import os

import numpy as np

from .schedule import NoiseSchedule, build_unmask_plan, loss_weight


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_schedule(schedule: NoiseSchedule, n_positions: int, path: str) -> str:
    """Keep probability, mask ratio, loss weight, and unmask counts vs t."""
    plt = _plt()
    t = np.arange(schedule.T + 1)
    plan = build_unmask_plan(n_positions, schedule.T)
    fig, axes = plt.subplots(2, 2, figsize=(9, 6))
    axes[0, 0].plot(t, schedule.alpha, marker=".")
    axes[0, 0].set_title("keep probability")
    axes[0, 1].plot(t, 1.0 - schedule.alpha, marker=".", color="tab:red")
    axes[0, 1].set_title("mask ratio")
    ts = np.arange(1, schedule.T + 1)
    axes[1, 0].plot(ts, [loss_weight(int(i), schedule.T) for i in ts], marker=".", color="tab:green")
    axes[1, 0].set_title("loss weight")
    axes[1, 1].step(t, plan.counts, where="mid", color="tab:purple")
    axes[1, 1].set_title(f"committed positions (N={n_positions})")
    for ax in axes.flat:
        ax.set_xlabel("t")
        ax.grid(alpha=0.3)
    fig.suptitle(f"{schedule.family} schedule, T={schedule.T}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_metrics(history, path: str) -> str:
    """Training and held-out loss curves from a metrics history."""
    plt = _plt()
    steps = [row.step for row in history]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(steps, [row.train_loss for row in history], label="train")
    holdout = [row.holdout_loss for row in history]
    if not all(np.isnan(holdout)):
        ax.plot(steps, holdout, label="held-out")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_eval_report(report, path: str) -> str:
    """Bar chart over the report's metrics."""
    plt = _plt()
    names = sorted(report.metrics)
    values = [report.metrics[n] for n in names]
    fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(names), 4.0))
    ax.bar(names, values, color="tab:blue")
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom", fontsize=9)
    ax.set_ylabel("value")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def figure_path(directory: str, name: str) -> str:
    os.makedirs(directory, exist_ok=True)
    return os.path.join(directory, name)
