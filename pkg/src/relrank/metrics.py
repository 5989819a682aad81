"""Recall@K / hit@K evaluation over predicted ranking lists.

recall@K is the fraction of a query's ground-truth list recovered within
the first K predictions; hit@K is 1 when that fraction is positive.  Both
are pure set intersections, so ordering inside the lists never changes a
value.  Corpus-level numbers are plain averages over queries that have a
non-empty ground-truth list; queries with empty lists are counted
separately instead of silently dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .datamodel import PredictionTable, RelevanceTable

DEFAULT_K_HIT = (5, 10, 20, 30)
DEFAULT_K_RECALL = (50, 100, 200, 300)


def _check_lists(truth: Sequence[str], pred: Sequence[str], k: int) -> tuple[set, set]:
    if not isinstance(k, int) or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    truth_set = set(truth)
    if not truth_set:
        raise ValueError("ground-truth list is empty; caller must skip such queries")
    if len(truth_set) != len(truth):
        raise ValueError("ground-truth list contains duplicates")
    top = list(pred[:k])
    if len(set(pred)) != len(pred):
        raise ValueError("prediction list contains duplicates")
    return truth_set, set(top)


def recall_at_k(truth: Sequence[str], pred: Sequence[str], k: int) -> float:
    """|truth ∩ first k of pred| / |truth|, as one exact float64 division."""
    truth_set, top_set = _check_lists(truth, pred, k)
    return len(truth_set & top_set) / len(truth_set)


def hit_at_k(truth: Sequence[str], pred: Sequence[str], k: int) -> int:
    """1 if any ground-truth item appears within the first k predictions, else 0."""
    truth_set, top_set = _check_lists(truth, pred, k)
    return 1 if truth_set & top_set else 0


@dataclass
class EvalReport:
    """Averaged metrics over a prediction run.

    ``hit_at`` / ``recall_at`` map each K of the respective grid to the
    average over evaluated queries; queries whose ground-truth list was
    empty are excluded from the averages and counted in
    ``skipped_queries``.
    """

    hit_at: dict[int, float]
    recall_at: dict[int, float]
    evaluated_queries: int
    skipped_queries: int
    k_grid_hit: tuple[int, ...]
    k_grid_recall: tuple[int, ...]

    def __post_init__(self) -> None:
        for label, table in (("hit", self.hit_at), ("recall", self.recall_at)):
            for k, value in table.items():
                if not 0.0 <= value <= 1.0:
                    raise ValueError(f"average {label}@{k} out of [0, 1]: {value}")


def _check_grid(grid: Sequence[int], name: str) -> tuple[int, ...]:
    ks = tuple(grid)
    if not ks:
        raise ValueError(f"{name} grid is empty")
    for k in ks:
        if not isinstance(k, int) or k < 1:
            raise ValueError(f"{name} grid contains a non-positive K: {k!r}")
    if len(set(ks)) != len(ks):
        raise ValueError(f"{name} grid contains duplicates")
    return ks


def evaluate(
    truth: RelevanceTable,
    pred: PredictionTable,
    k_hit: Sequence[int] = DEFAULT_K_HIT,
    k_recall: Sequence[int] = DEFAULT_K_RECALL,
) -> EvalReport:
    """Average recall@K and hit@K over all queries with ground truth.

    Every query with a non-empty truth list must have a prediction entry;
    missing entries are an error (listing the first 10 offenders), never a
    silent zero.
    """
    ks_hit = _check_grid(k_hit, "hit")
    ks_recall = _check_grid(k_recall, "recall")
    missing = [
        q for q, members in truth.entries.items() if members and q not in pred.entries
    ]
    if missing:
        shown = ", ".join(repr(q) for q in missing[:10])
        more = "" if len(missing) <= 10 else f" (and {len(missing) - 10} more)"
        raise ValueError(f"{len(missing)} queries missing from predictions: {shown}{more}")

    hit_sums = {k: 0 for k in ks_hit}
    recall_sums = {k: 0.0 for k in ks_recall}
    evaluated = 0
    skipped = 0
    for query, members in truth.entries.items():
        if not members:
            skipped += 1
            continue
        ranked = pred.entries[query]
        for k in ks_hit:
            hit_sums[k] += hit_at_k(members, ranked, k)
        for k in ks_recall:
            recall_sums[k] += recall_at_k(members, ranked, k)
        evaluated += 1
    if evaluated == 0:
        raise ValueError("no queries with non-empty ground truth to evaluate")
    return EvalReport(
        hit_at={k: hit_sums[k] / evaluated for k in ks_hit},
        recall_at={k: recall_sums[k] / evaluated for k in ks_recall},
        evaluated_queries=evaluated,
        skipped_queries=skipped,
        k_grid_hit=ks_hit,
        k_grid_recall=ks_recall,
    )


# ---------------------------------------------------------------------------
# report rendering
# ---------------------------------------------------------------------------


def format_report_text(report: EvalReport) -> str:
    """Human-readable table: hit@k block, recall@k block, one value row."""
    hit_heads = [f"k={k}" for k in report.k_grid_hit]
    rec_heads = [f"k={k}" for k in report.k_grid_recall]
    width = max(7, *(len(h) + 2 for h in hit_heads + rec_heads))

    def block(cells: list[str]) -> str:
        return "".join(c.rjust(width) for c in cells)

    hit_vals = [f"{report.hit_at[k]:.3f}" for k in report.k_grid_hit]
    rec_vals = [f"{report.recall_at[k]:.3f}" for k in report.k_grid_recall]
    hit_width = width * len(hit_heads)
    rec_width = width * len(rec_heads)
    lines = [
        "|" + "hit@k".center(hit_width) + " |" + "recall@k".center(rec_width),
        "|" + block(hit_heads) + " |" + block(rec_heads),
        "|" + block(hit_vals) + " |" + block(rec_vals),
        "",
        f"evaluated queries: {report.evaluated_queries}",
        f"skipped queries (empty ground truth): {report.skipped_queries}",
    ]
    return "\n".join(lines) + "\n"


def format_report_kv(report: EvalReport) -> str:
    """Machine-readable ``key=value`` lines (full float precision)."""
    lines = [f"hit@{k}={report.hit_at[k]!r}" for k in report.k_grid_hit]
    lines += [f"recall@{k}={report.recall_at[k]!r}" for k in report.k_grid_recall]
    lines.append(f"evaluated_queries={report.evaluated_queries}")
    lines.append(f"skipped_queries={report.skipped_queries}")
    return "\n".join(lines) + "\n"


def save_report(report: EvalReport, prefix: str | Path) -> list[Path]:
    """Write ``<prefix>.txt`` and ``<prefix>.kv``; returns the paths."""
    prefix = Path(prefix)
    text_path = prefix.with_name(prefix.name + ".txt")
    kv_path = prefix.with_name(prefix.name + ".kv")
    text_path.write_text(format_report_text(report), encoding="utf-8")
    kv_path.write_text(format_report_kv(report), encoding="utf-8")
    return [text_path, kv_path]
