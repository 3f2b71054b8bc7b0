"""Static bar charts of aggregate rows (needs matplotlib)."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_rows(rows: Sequence, path: str) -> None:
    tasks = sorted({r.task for r in rows})
    planners = sorted({r.planner for r in rows})
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    width = 0.8 / max(1, len(planners))
    for k, p in enumerate(planners):
        by_task = {r.task: r for r in rows if r.planner == p}
        xs = [i + k * width for i in range(len(tasks))]
        axes[0].bar(xs, [100 * by_task[t].ar_w if t in by_task else 0 for t in tasks], width, label=p)
        axes[1].bar(xs, [by_task[t].mean_grasps if t in by_task else 0 for t in tasks], width, label=p)
    for ax, title in zip(axes, ("AR_w (%)", "mean grasps")):
        ax.set_xticks([i + 0.4 - width / 2 for i in range(len(tasks))], tasks)
        ax.set_title(title)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
