"""Deterministic CSV outputs and matplotlib figures for scenario runs."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

DETAIL_HEADER = ["seed", "increment", "fold", "sensitivity", "afp"]
SUMMARY_HEADER = ["seed", "increment", "afp_at_0.80", "afp_at_0.85", "afp_at_0.90"]


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_detail_csv(path: Path, rows: list[tuple]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(DETAIL_HEADER)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def write_summary_csv(path: Path, rows: list[tuple]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SUMMARY_HEADER)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def render_figures(out_dir: Path) -> list[Path]:
    """Render per-increment FROC-style fold curves and the AFP-vs-increment
    summary as PNGs next to the CSVs they are drawn from."""
    out_dir = Path(out_dir)
    produced: list[Path] = []

    detail = _read_csv(out_dir / "froc_detail.csv")
    by_key: dict[tuple, list[dict]] = defaultdict(list)
    increments: list[int] = []
    for row in detail:
        if not row["afp"]:
            continue
        inc = int(row["increment"])
        if inc not in increments:
            increments.append(inc)
        by_key[(row["seed"], inc, row["fold"])].append(row)

    seeds = sorted({k[0] for k in by_key if k[2] != "mean"})
    for inc in increments:
        fig, axes = plt.subplots(1, max(len(seeds), 1), figsize=(4 * max(len(seeds), 1), 3.5), squeeze=False)
        for ax, seed in zip(axes[0], seeds):
            for (s, i, fold), rows in sorted(by_key.items(), key=lambda kv: str(kv[0])):
                if s != seed or i != inc or fold == "mean":
                    continue
                xs = [float(r["afp"]) for r in rows]
                ys = [float(r["sensitivity"]) for r in rows]
                ax.plot(xs, ys, alpha=0.5, linewidth=1, label=f"fold {fold}")
            mean_rows = by_key.get((seed, inc, "mean"), [])
            if mean_rows:
                ax.plot(
                    [float(r["afp"]) for r in mean_rows],
                    [float(r["sensitivity"]) for r in mean_rows],
                    color="black",
                    linewidth=2,
                    label="mean",
                )
            ax.set_title(f"seed {seed}, {inc} series")
            ax.set_xlabel("false positives per patient")
            ax.set_ylabel("sensitivity")
            ax.legend(fontsize=6)
        fig.tight_layout()
        path = out_dir / f"froc_increment_{inc}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        produced.append(path)

    summary = _read_csv(out_dir / "afp_summary.csv")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    series: dict[str, list[tuple[int, float]]] = defaultdict(list)
    for row in summary:
        if row["afp_at_0.90"]:
            series[row["seed"]].append((int(row["increment"]), float(row["afp_at_0.90"])))
    for seed, pts in sorted(series.items()):
        pts.sort()
        style = dict(color="black", linewidth=2) if seed == "median" else dict(alpha=0.6)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"seed {seed}", **style)
    ax.set_xlabel("series in archive")
    ax.set_ylabel("FP/patient at 90% sensitivity")
    ax.set_title("false-positive rate across feedback increments")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = out_dir / "afp_trend.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    produced.append(path)
    return produced
