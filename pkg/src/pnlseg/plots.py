"""Static report plots rendered from run artifacts (metrics.csv, sweep.csv)."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import DataError


def read_metrics_csv(path) -> list:
    path = Path(path)
    if not path.exists():
        raise DataError(f"metrics file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"metrics file is empty: {path}")
    return rows


def _series(rows, phase, column):
    xs, ys = [], []
    for r in rows:
        if r["phase"] != phase or r.get(column, "") == "":
            continue
        xs.append(int(r["epoch"]))
        ys.append(float(r[column]))
    return xs, ys


def plot_loss_curves(rows, out_path):
    fig, ax = plt.subplots(figsize=(7, 4))
    for phase, style in (("teacher", "--"), ("student", "-")):
        for col, color in (("total", "k"), ("l_pxl", "C0"), ("l_cs", "C1"), ("l_pn", "C2")):
            xs, ys = _series(rows, phase, col)
            if xs:
                ax.plot(xs, ys, style, color=color, label=f"{phase} {col}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7, ncol=2)
    ax.set_title("loss components per epoch")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_containment(rows_by_label, out_path, threshold=0.9):
    """Fraction of pseudo-labels containing their point, per epoch."""
    fig, ax = plt.subplots(figsize=(7, 4))
    any_points = False
    for label, rows in rows_by_label.items():
        xs, ys = _series(rows, "student", "containment")
        if xs:
            any_points = True
            ax.plot(xs, ys, marker=".", label=label)
    if not any_points:
        plt.close(fig)
        raise DataError("no containment data in the given metrics files")
    ax.axhline(threshold, color="gray", lw=0.8, ls=":")
    ax.set_xlabel("epoch")
    ax.set_ylabel("point containment fraction")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    ax.set_title("pseudo-label point containment during training")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_ablation_bars(miou_by_label, out_path):
    labels = list(miou_by_label)
    vals = [miou_by_label[k] for k in labels]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels)), 4))
    ax.bar(range(len(labels)), vals, color="C0")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("test mIoU (%)")
    ax.set_title("configuration comparison")
    for i, v in enumerate(vals):
        if not math.isnan(v):
            ax.text(i, v, f"{v:.1f}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_radius_sweep(radii, miou_values, out_path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(radii, miou_values, marker="o")
    ax.set_xlabel("neighborhood radius (px)")
    ax.set_ylabel("test mIoU (%)")
    ax.set_title("segmentation quality vs neighborhood radius")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
