"""Figure rendering for evaluation and sweep reports.

Figures are written to files next to the text/key=value outputs; rendering
always uses the Agg backend so headless runs behave the same as
interactive ones.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .metrics import EvalReport


def _metric_panels(figsize=(8.0, 3.2)):
    fig, (ax_hit, ax_recall) = plt.subplots(1, 2, figsize=figsize)
    ax_hit.set_xlabel("k")
    ax_hit.set_ylabel("hit@k")
    ax_recall.set_xlabel("k")
    ax_recall.set_ylabel("recall@k")
    for ax in (ax_hit, ax_recall):
        ax.grid(True, linewidth=0.3, alpha=0.6)
    return fig, ax_hit, ax_recall


def save_eval_figure(report: EvalReport, path: str | Path) -> Path:
    """One figure, two panels: hit@k and recall@k over their K grids."""
    fig, ax_hit, ax_recall = _metric_panels()
    ax_hit.plot(report.k_grid_hit, [report.hit_at[k] for k in report.k_grid_hit], "o-")
    ax_recall.plot(
        report.k_grid_recall, [report.recall_at[k] for k in report.k_grid_recall], "s-"
    )
    ax_hit.set_ylim(0.0, 1.0)
    ax_recall.set_ylim(0.0, 1.0)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def save_sweep_figure(
    rows: Sequence[tuple[int, int, EvalReport]], path: str | Path
) -> Path:
    """Metric curves for every (dim, epochs) configuration of a sweep."""
    fig, ax_hit, ax_recall = _metric_panels(figsize=(9.0, 3.6))
    for dim, epochs, report in rows:
        label = f"d={dim}, e={epochs}"
        ax_hit.plot(
            report.k_grid_hit, [report.hit_at[k] for k in report.k_grid_hit], "o-", label=label
        )
        ax_recall.plot(
            report.k_grid_recall,
            [report.recall_at[k] for k in report.k_grid_recall],
            "s-",
            label=label,
        )
    ax_hit.legend(fontsize=7)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
