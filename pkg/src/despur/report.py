"""Training-report rendering: CSV plus matplotlib figures from metrics files."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402 - backend must be pinned first

from .errors import InvalidArgument

METRIC_COLUMNS = ("epoch", "train_loss", "train_acc", "test_acc", "consistency_mean")


def load_metrics(metrics_path) -> list[dict]:
    path = Path(metrics_path)
    if not path.is_file():
        raise InvalidArgument(f"metrics file not found: {path}")
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"bad metrics line in {path}: {exc}") from exc
        rows.append(row)
    if not rows:
        raise InvalidArgument(f"metrics file is empty: {path}")
    return rows


def write_training_report(metrics_path, out_dir) -> list[Path]:
    """Render metrics.csv plus loss/accuracy figures; returns written paths."""
    rows = load_metrics(metrics_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    csv_path = out / "metrics.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in METRIC_COLUMNS})
    written.append(csv_path)

    epochs = [r.get("epoch", i) for i, r in enumerate(rows)]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r.get("train_loss") for r in rows], label="train loss", color="tab:red")
    cons = [r.get("consistency_mean") for r in rows]
    if any(c is not None for c in cons):
        ax.plot(epochs, cons, label="consistency (mean)", color="tab:purple", linestyle="--")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    loss_path = out / "loss_curve.png"
    fig.savefig(loss_path, dpi=120)
    plt.close(fig)
    written.append(loss_path)

    fig, ax = plt.subplots(figsize=(6, 4))
    for key, color in (("train_acc", "tab:blue"), ("test_acc", "tab:green")):
        series = [r.get(key) for r in rows]
        if any(v is not None for v in series):
            ax.plot(epochs, series, label=key.replace("_", " "), color=color)
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    acc_path = out / "accuracy_curve.png"
    fig.savefig(acc_path, dpi=120)
    plt.close(fig)
    written.append(acc_path)

    return written
