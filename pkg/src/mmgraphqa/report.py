"""Figure and table rendering for training/eval reports."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .model import EpochLog, Metrics


def write_history_files(history: list[EpochLog], out_dir: str | Path) -> dict[str, Path]:
    """Per-epoch log as CSV plus loss-curve and lr-schedule figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "history.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr_mult", "mean_loss", "train_acc"])
        for h in history:
            writer.writerow([h.epoch, f"{h.lr_mult:.12g}", f"{h.mean_loss:.12g}",
                             "" if h.train_acc is None else f"{h.train_acc:.12g}"])

    epochs = [h.epoch for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [h.mean_loss for h in history], marker="o", label="mean loss")
    accs = [h.train_acc for h in history]
    if any(a is not None for a in accs):
        ax2 = ax.twinx()
        ax2.plot(epochs, accs, color="tab:green", marker=".", label="train acc")
        ax2.set_ylabel("train accuracy")
        ax2.set_ylim(0, 1.05)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title("training curve")
    fig.tight_layout()
    loss_path = out / "loss_curve.png"
    fig.savefig(loss_path, dpi=100)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(epochs, [h.lr_mult for h in history], marker=".")
    ax.set_xlabel("epoch")
    ax.set_ylabel("lr multiplier")
    ax.set_title("learning-rate schedule")
    fig.tight_layout()
    lr_path = out / "lr_schedule.png"
    fig.savefig(lr_path, dpi=100)
    plt.close(fig)
    return {"csv": csv_path, "loss_curve": loss_path, "lr_schedule": lr_path}


def write_metrics_figure(metrics: Metrics, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names, values = [], []
    for name, value in (("Q->A", metrics.q2a), ("QA->R", metrics.qa2r), ("Q->AR", metrics.q2ar)):
        if value is not None:
            names.append(name)
            values.append(value)
    fig, ax = plt.subplots(figsize=(4, 3))
    bars = ax.bar(names, values, color="tab:blue")
    ax.bar_label(bars, fmt="%.3f")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("accuracy")
    ax.set_title(f"metrics over {metrics.n_examples} examples")
    fig.tight_layout()
    path = out / "metrics.png"
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
