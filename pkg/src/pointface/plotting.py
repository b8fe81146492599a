"""PNG figures for reports. Uses the Agg backend and fixed metadata so reruns are byte-identical."""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_roc(curve, path, title: str = "ROC") -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(curve.far, curve.tar, lw=1.5, label=f"AUC {curve.auc:.4f}")
    ax.plot([0, 1], [0, 1], ls=":", c="grey", lw=0.8)
    ax.set_xlabel("false accept rate")
    ax.set_ylabel("true accept rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    _save(fig, path)


def plot_loss(history, path) -> None:
    epochs = [r.epoch for r in history]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, [r.loss for r in history], c="C0", label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r.accuracy for r in history], c="C1", label="train accuracy")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0, 1.02)
    fig.legend(loc="upper center", ncol=2, fontsize="small")
    fig.tight_layout()
    _save(fig, path)


def plot_sampling(positions: np.ndarray, selected: Sequence[int], path,
                  candidate_mask: Optional[np.ndarray] = None, curvature: Optional[np.ndarray] = None) -> None:
    """Frontal (x, y) view of a cloud with the selected centroids marked."""
    fig, ax = plt.subplots(figsize=(4.5, 5))
    c = curvature if curvature is not None else "lightgrey"
    ax.scatter(positions[:, 0], positions[:, 1], s=2, c=c, cmap="viridis")
    if candidate_mask is not None and not candidate_mask.all():
        out = ~candidate_mask
        ax.scatter(positions[out, 0], positions[out, 1], s=2, c="mistyrose")
    sel = np.asarray(selected, dtype=np.intp)
    ax.scatter(positions[sel, 0], positions[sel, 1], s=10, c="crimson", marker="x", lw=0.8)
    ax.set_aspect("equal")
    ax.set_title(f"{len(sel)} centroids")
    fig.tight_layout()
    _save(fig, path)


def plot_ablation(cells: Mapping[str, float], path, title: str = "rank-1 by sampling setting") -> None:
    names = list(cells)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(names)), [cells[n] for n in names], color="C0")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize="small")
    ax.set_ylim(0, 1.02)
    ax.set_ylabel("rank-1")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
