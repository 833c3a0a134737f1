"""Result tables: per-run metric columns, averages, and score dumps."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .drift import AccuracyReport
from .twin import ScoreRecord

METRIC_ROWS = (
    ("majority_mean_threshold", "Mean Threshold"),
    ("majority_samples", "Majority Samples"),
    ("all_samples", "All Samples"),
    ("hedges_g", "Hedges' g"),
)


@dataclass
class RunsTable:
    """Per-metric values across runs, their mean, and the best run per metric."""

    metrics: dict[str, list[float]]
    averages: dict[str, float]
    best_run: dict[str, int]  # 1-based run index

    @property
    def n_runs(self) -> int:
        return len(next(iter(self.metrics.values())))


def aggregate_runs(reports: Sequence[AccuracyReport]) -> RunsTable:
    if not reports:
        raise ValueError("no reports to aggregate")
    metrics: dict[str, list[float]] = {key: [] for key, _ in METRIC_ROWS}
    for report in reports:
        values = report.as_dict()
        for key in metrics:
            metrics[key].append(values[key])
    averages = {key: sum(vals) / len(vals) for key, vals in metrics.items()}
    best_run = {key: max(range(len(vals)), key=lambda i: vals[i]) + 1 for key, vals in metrics.items()}
    return RunsTable(metrics=metrics, averages=averages, best_run=best_run)


def render_table(table: RunsTable, title: str) -> str:
    """Plain-text table: one row per metric, R1..RK columns plus Average."""
    headers = [""] + [f"R{i}" for i in range(1, table.n_runs + 1)] + ["Average"]
    rows = []
    for key, label in METRIC_ROWS:
        cells = [f"{v * 100:.2f}%" for v in table.metrics[key]]
        best = table.best_run[key] - 1
        cells[best] = f"*{cells[best]}"
        rows.append([label] + cells + [f"{table.averages[key] * 100:.2f}%"])
    widths = [max(len(r[i]) for r in [headers] + rows) for i in range(len(headers))]
    lines = [title, ""]
    for row in [headers] + rows:
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
    lines.append("")
    lines.append("* best run for that metric")
    return "\n".join(lines) + "\n"


def save_runs_table(table: RunsTable, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "metrics": table.metrics,
        "averages": table.averages,
        "best_run": table.best_run,
    }
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def save_accuracy_report(report: AccuracyReport, seed: int, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": 1,
        "seed": seed,
        "n_days": report.n_days,
        "n_scores": report.n_scores,
        **report.as_dict(),
    }
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_scores_csv(records: Sequence[ScoreRecord], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "left_device", "left_day", "left_window",
                "right_device", "right_day", "right_window",
                "score", "predicted", "label", "split",
            ]
        )
        for rec in records:
            writer.writerow(
                list(rec.left)
                + list(rec.right)
                + [
                    repr(rec.score),
                    int(rec.predicted),
                    "" if rec.label is None else int(rec.label),
                    rec.split or "",
                ]
            )


def plot_score_distributions(
    per_device_scores: dict[str, Sequence[float]], out_dir: Path
) -> list[Path]:
    """Optional per-device score histograms (requires matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for device, scores in sorted(per_device_scores.items()):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.hist(scores, bins=40)
        ax.axvline(0.5, linestyle="--", linewidth=1)
        ax.set_title(device)
        ax.set_xlabel("similarity score")
        ax.set_ylabel("pairs")
        fig.tight_layout()
        path = out_dir / f"scores-{device}.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written
