"""
Report files: CSV tables (pandas) with matching readers, static SVG renderings
(matplotlib, Agg) and JSON summaries. Nothing written here carries a timestamp,
so identical inputs give identical bytes.
"""
import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from confidence.sweep import SweepRecord  # noqa: E402

logger = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "doppler-reports"
SVG_METADATA = {"Date": None}
SWEEP_COLUMNS = ["dataset", "q", "ignored", "error", "accepted_accuracy", "total", "source"]


def _directory(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(data, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


# confusion matrix

def write_confusion(report, report_dir) -> List[Path]:
    out = _directory(report_dir)
    counts_path, pct_path = out / "confusion.csv", out / "confusion_pct.csv"
    report.confusion.to_csv(counts_path)
    report.confusion_pct.to_csv(pct_path)
    svg = render_confusion(report.confusion, report.structural, out / "confusion.svg")
    metrics = write_json(report.to_metrics(), out / "metrics.json")
    logger.info("confusion reports written to %s", out)
    return [counts_path, pct_path, svg, metrics]


def read_confusion(path) -> pd.DataFrame:
    return pd.read_csv(path, index_col=0)


def render_confusion(counts: pd.DataFrame, structural: Iterable = (), path=None) -> Path:
    """Row-normalized colours; structural cells stay blank"""
    blank = {tuple(cell) for cell in structural}
    totals = counts.sum(axis=1).replace(0, np.nan)
    pct = counts.div(totals, axis=0).fillna(0.0).to_numpy()
    labels = list(counts.columns)
    fig, ax = plt.subplots(figsize=(0.45 * len(labels) + 2, 0.45 * len(labels) + 1.5))
    ax.imshow(pct, cmap="Blues", vmin=0.0, vmax=1.0)
    for i, true in enumerate(counts.index):
        for j, pred in enumerate(labels):
            if (true, pred) in blank:
                continue
            value = int(counts.iloc[i, j])
            ax.text(j, i, str(value), ha="center", va="center", fontsize=6,
                    color="white" if pct[i, j] > 0.5 else "black")
    ax.set_xticks(range(len(labels)), labels, rotation=90, fontsize=7)
    ax.set_yticks(range(len(counts.index)), list(counts.index), fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    return Path(path)


# sweep

def sweep_frame(records: Sequence[SweepRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in records], columns=SWEEP_COLUMNS)


def write_sweep(records: Sequence[SweepRecord], report_dir, name: str = "sweep") -> List[Path]:
    out = _directory(report_dir)
    csv_path = out / f"{name}.csv"
    sweep_frame(records).to_csv(csv_path, index=False)
    svg = render_sweep(records, out / f"{name}.svg")
    logger.info("sweep reports written to %s", csv_path)
    return [csv_path, svg]


def _optional(value) -> Optional[float]:
    return None if pd.isna(value) else float(value)


def read_sweep(path) -> List[SweepRecord]:
    frame = pd.read_csv(path)
    return [
        SweepRecord(
            dataset=str(row.dataset),
            q=float(row.q),
            ignored=float(row.ignored),
            error=_optional(row.error),
            accepted_accuracy=_optional(row.accepted_accuracy),
            total=int(row.total),
            source=str(row.source),
        )
        for row in frame.itertuples(index=False)
    ]


def render_sweep(records: Sequence[SweepRecord], path) -> Path:
    """Ignored rate on the left axis, error rate on the right, one line pair per dataset"""
    frame = sweep_frame(records)
    fig, left = plt.subplots(figsize=(6, 4))
    right = left.twinx()
    for dataset, rows in frame.groupby("dataset", sort=False):
        q = rows["q"].to_numpy() * 100
        left.plot(q, rows["ignored"].to_numpy() * 100, color="tab:green", marker="o", markersize=3,
                  label=f"{dataset} ignored")
        if rows["error"].notna().all():
            right.plot(q, rows["error"].to_numpy() * 100, color="tab:red", linestyle="--",
                       label=f"{dataset} error")
    left.set_xlabel("quantile (%)")
    left.set_ylabel("ignored (%)", color="tab:green")
    right.set_ylabel("error (%)", color="tab:red")
    handles = left.get_legend_handles_labels()
    extra = right.get_legend_handles_labels()
    left.legend(handles[0] + extra[0], handles[1] + extra[1], fontsize=7, loc="upper left")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    return Path(path)


# experiments

EXPERIMENT_COLUMNS = ["id", "variant", "input", "accuracy", "parameters", "size_mb", "ms_per_sample"]


def write_experiments(rows: Sequence, report_dir) -> Path:
    out = _directory(report_dir)
    path = out / "experiments.csv"
    pd.DataFrame([asdict(row) for row in rows], columns=EXPERIMENT_COLUMNS).to_csv(path, index=False)
    logger.info("experiment table written to %s", path)
    return path


def read_experiments(path) -> pd.DataFrame:
    return pd.read_csv(path)


# predictions

def write_predictions(lines: Sequence[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(line, sort_keys=True, separators=(",", ":")) + "\n" for line in lines))
    return path


def read_predictions(path) -> List[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
