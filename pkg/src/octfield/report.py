"""CSV tables and matplotlib figures written next to command outputs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

LOSS_COLUMNS = ("epoch", "L_geo", "L_h", "L_k", "L_KL", "total")
CELL_COLUMNS = ("level", "adaptive", "regular")


def write_csv(path, rows, columns) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def plot_losses(rows, path, title: str = "training loss") -> Path:
    rows = list(rows)
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    epochs = [r["epoch"] for r in rows]
    for key in LOSS_COLUMNS[1:]:
        vals = [r[key] for r in rows]
        if any(v > 0 for v in vals):
            ax.plot(epochs, vals, label=key, lw=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_cell_counts(table, path, title: str = "occupied cells per level") -> Path:
    """Bar chart of adaptive occupied-cell counts against the full 8^level grid."""
    levels = [r[0] for r in table]
    adaptive = [r[1] for r in table]
    regular = [r[2] for r in table]
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    w = 0.38
    ax.bar([l - w / 2 for l in levels], regular, w, label="regular grid", color="0.7")
    ax.bar([l + w / 2 for l in levels], adaptive, w, label="adaptive octree", color="C0")
    ax.set_yscale("log")
    ax.set_xticks(levels)
    ax.set_xlabel("level")
    ax.set_ylabel("cells")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
