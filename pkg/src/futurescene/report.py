"""Evaluation report rendering: text tables, CSV, figures.

One table per metric with the horizon offsets as columns (the layout of
the comparison tables this pipeline is scored with), a machine-readable
CSV/key-value mirror, and a four-panel matplotlib figure saved next to
the delimited output.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import ClipReport

logger = logging.getLogger(__name__)

_METRICS = (
    ("mse", "Mean Squared Error (lower is better)", "mse"),
    ("ssim", "Structural Similarity (higher is better)", "ssim"),
    ("is", "Inception Score (higher is better)", "inception"),
    ("fid", "Frechet Inception Distance (lower is better)", "fid"),
)


def _offset_label(offset: float) -> str:
    return f"+{offset:.1f}s"


def _cell(value) -> str:
    return "skipped" if value is None else f"{value:.4g}"


def format_tables(report: ClipReport, method: str = "futurescene") -> str:
    """Four per-metric tables, horizon offsets as columns."""
    offsets = [_offset_label(h.offset) for h in report.horizons]
    blocks = []
    for key, title, attr in _METRICS:
        width = max(12, len(method) + 2)
        header = "Method".ljust(width) + " | " + " | ".join(
            f"{o:>8}" for o in offsets)
        rule = "-" * len(header)
        cells = [f"{_cell(getattr(h, attr)):>8}" for h in report.horizons]
        row = method.ljust(width) + " | " + " | ".join(cells)
        blocks.append(f"{title}\n{rule}\n{header}\n{rule}\n{row}\n")
        notes = sorted({n for h in report.horizons for n in h.notes
                        if n.startswith(key)})
        blocks.extend(f"  note: {n}\n" for n in notes)
    return "\n".join(blocks)


def key_value_lines(report: ClipReport) -> list:
    lines = []
    for key, _, attr in _METRICS:
        for h in report.horizons:
            value = getattr(h, attr)
            rendered = "skipped" if value is None else repr(value)
            lines.append(f"{key}[{_offset_label(h.offset)}] = {rendered}")
    lines.append(f"crops = {sum(h.n_crops for h in report.horizons)}")
    return lines


def write_csv(report: ClipReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric"] + [_offset_label(h.offset)
                                 for h in report.horizons])
        for key, _, attr in _METRICS:
            w.writerow([key] + [
                "" if getattr(h, attr) is None else repr(getattr(h, attr))
                for h in report.horizons])


def write_figures(report: ClipReport, path) -> Path:
    """Four-panel figure of each metric against the future offset."""
    offsets = [h.offset for h in report.horizons]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6))
    for ax, (key, title, attr) in zip(axes.flat, _METRICS):
        values = [getattr(h, attr) for h in report.horizons]
        known = [(o, v) for o, v in zip(offsets, values) if v is not None]
        if known:
            xs, ys = zip(*known)
            ax.plot(xs, ys, marker="o", color="#1f6f8b")
        else:
            ax.text(0.5, 0.5, "skipped", ha="center", va="center",
                    transform=ax.transAxes, color="gray")
        ax.set_title(title, fontsize=9)
        ax.set_xlabel("future offset (s)", fontsize=8)
        ax.set_ylabel(key.upper(), fontsize=8)
        ax.grid(True, alpha=0.3)
        ax.tick_params(labelsize=8)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return out


def write_report_files(report: ClipReport, out_dir,
                       method: str = "futurescene") -> dict:
    """Persist tables, CSV and the figure; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text_path = out / "report.txt"
    text_path.write_text(format_tables(report, method))
    csv_path = out / "report.csv"
    write_csv(report, csv_path)
    fig_path = write_figures(report, out / "metrics.png")
    return {"text": text_path, "csv": csv_path, "figure": fig_path}
