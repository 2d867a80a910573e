"""Matplotlib figures written next to the CSV/JSON reports."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.dpi": 120,
    "svg.hashsalt": "lpgnet",
}


def new_figure(width: float = 6.0, height: float | None = None, ncols: int = 1):
    golden = (math.sqrt(5) - 1.0) / 2.0
    height = height or width * golden
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, ncols, figsize=(width, height), squeeze=False)
    return fig, axes[0]


def _save(fig, path) -> Path:
    path = Path(path)
    with plt.rc_context(_RC):
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def plot_training_curves(history: Sequence[dict], path, title: str | None = None) -> Path:
    epochs = [row["epoch"] for row in history]
    fig, (ax_loss, ax_acc) = new_figure(9.0, 3.4, ncols=2)
    ax_loss.plot(epochs, [r["loss_total"] for r in history], label="total")
    ax_loss.plot(epochs, [r["loss_task"] for r in history], label="task")
    if any(r["loss_ce_t"] or r["loss_ce_a"] for r in history):
        ax_loss.plot(epochs, [r["loss_ce_t"] + r["loss_ce_a"] for r in history], label="student CE", ls="--")
        ax_loss.plot(epochs, [r["loss_kl_t"] + r["loss_kl_a"] for r in history], label="student KL", ls=":")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    ax_acc.plot(epochs, [100 * r["train_accuracy"] for r in history], label="train acc")
    ax_acc.plot(epochs, [100 * r["val_accuracy"] for r in history], label="val acc")
    ax_acc.plot(epochs, [100 * r["val_macro_f1"] for r in history], label="val macro-F1")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("%")
    ax_acc.legend()
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_confusion(confusion, labels: Sequence[str], path) -> Path:
    cm = np.asarray(confusion)
    fig, (ax,) = new_figure(4.2, 3.8)
    ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right")
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    peak = cm.max() if cm.size else 0
    for (i, j), v in np.ndenumerate(cm):
        ax.text(j, i, str(v), ha="center", va="center", color="white" if v > peak / 2 else "black", fontsize=8)
    return _save(fig, path)


def plot_ablation(rows: Sequence[dict], path) -> Path:
    names = [r["variant"] for r in rows]
    acc = [100 * r["test_accuracy"] for r in rows]
    f1 = [100 * r["test_macro_f1"] for r in rows]
    y = np.arange(len(names))
    fig, (ax,) = new_figure(6.0, 0.45 * len(names) + 1.2)
    ax.barh(y - 0.2, acc, height=0.4, label="accuracy")
    ax.barh(y + 0.2, f1, height=0.4, label="macro-F1")
    ax.set_yticks(y, names)
    ax.invert_yaxis()
    ax.set_xlabel("%")
    ax.legend(loc="lower right")
    return _save(fig, path)


def plot_bench(rows: Sequence[dict], path) -> Path:
    fig, (ax_p, ax_t) = new_figure(9.0, 3.4, ncols=2)
    for arch in sorted({r["arch"] for r in rows}):
        sub = [r for r in rows if r["arch"] == arch]
        dims = sorted({r["d"] for r in sub})
        ax_p.plot(dims, [next(r["params"] for r in sub if r["d"] == d) for d in dims], marker="o", label=arch)
        for length in sorted({r["U"] for r in sub}):
            pts = sorted((r["d"], r["median_forward_ms"]) for r in sub if r["U"] == length)
            ax_t.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"{arch} U={length}")
    ax_p.set_xlabel("d")
    ax_p.set_ylabel("parameters")
    ax_p.set_yscale("log")
    ax_p.legend()
    ax_t.set_xlabel("d")
    ax_t.set_ylabel("median forward (ms)")
    ax_t.legend(fontsize=7)
    return _save(fig, path)
