"""Figure rendering for training traces, label sweeps, and alignment heatmaps.

Each renderer writes a PNG next to the delimited file it illustrates. The
Agg backend is forced so rendering works headless, and figure metadata is
pinned so the same inputs produce the same bytes.
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import Sequence

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .ioutil import write_bytes_atomic  # noqa: E402

# strip the library version from the PNG header; rendering should not
# change byte-for-byte when only the patch version of matplotlib does
_METADATA = {"Software": "otalign"}

SWEEP_RATIOS = (0.0, 0.1, 0.2, 0.5, 1.0)


def _save(fig, path: Path) -> Path:
    buffer = io.BytesIO()
    fig.savefig(buffer, format="png", dpi=150, metadata=_METADATA)
    plt.close(fig)
    write_bytes_atomic(path, buffer.getvalue())
    return path


def render_loss_curves(
    rows: Sequence[dict], columns: Sequence[str], path: str | Path, title: str
) -> Path:
    """Plot per-epoch loss components from trace rows keyed by column name."""
    if not rows:
        raise ValueError("no loss rows to plot")
    path = Path(path)
    epochs = [row["epoch"] for row in rows]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for column in columns:
        ax.plot(epochs, [row[column] for row in rows], marker=".", label=column)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def render_label_sweep(rows: Sequence[dict], path: str | Path) -> Path:
    """Plot extraction F1 against the alignment-label ratio.

    Each seed contributes a faint line; the across-seed mean is drawn on
    top. Rows carry ratio, seed, and f1 keys.
    """
    if not rows:
        raise ValueError("no sweep rows to plot")
    path = Path(path)
    seeds = sorted({row["seed"] for row in rows})
    ratios = sorted({row["ratio"] for row in rows})
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for seed in seeds:
        per_seed = sorted(
            (row for row in rows if row["seed"] == seed), key=lambda r: r["ratio"]
        )
        ax.plot(
            [row["ratio"] for row in per_seed],
            [row["f1"] for row in per_seed],
            color="tab:gray",
            alpha=0.4,
            linewidth=1.0,
        )
    means = [
        float(np.mean([row["f1"] for row in rows if row["ratio"] == ratio]))
        for ratio in ratios
    ]
    ax.plot(ratios, means, color="tab:blue", marker="o", label="mean over seeds")
    ax.set_xlabel("fraction of alignment labels kept")
    ax.set_ylabel("pro-pair F1")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("extraction quality vs. supervision")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def render_heatmap(
    plan_matrix: np.ndarray,
    r_hat_x: np.ndarray,
    r_hat_y: np.ndarray,
    tau: float,
    path: str | Path,
    pair_id: str,
) -> Path:
    """Render the transport plan with extracted pro pairs outlined."""
    plan_matrix = np.asarray(plan_matrix, dtype=float)
    if plan_matrix.ndim != 2:
        raise ValueError("plan must be a matrix")
    path = Path(path)
    fig, ax = plt.subplots(
        figsize=(0.35 * plan_matrix.shape[1] + 2.2, 0.35 * plan_matrix.shape[0] + 1.8)
    )
    image = ax.imshow(plan_matrix, cmap="viridis", aspect="auto")
    fig.colorbar(image, ax=ax, label="plan mass")
    above = (
        (plan_matrix >= tau)
        & (np.asarray(r_hat_x)[:, None] != 0)
        & (np.asarray(r_hat_y)[None, :] != 0)
    )
    for m, n in zip(*np.nonzero(above)):
        ax.add_patch(
            plt.Rectangle(
                (n - 0.5, m - 0.5), 1.0, 1.0, fill=False, edgecolor="red", linewidth=1.2
            )
        )
    ax.set_xlabel("second case sentence")
    ax.set_ylabel("first case sentence")
    ax.set_title(f"{pair_id}: alignment plan (threshold {tau:g})")
    fig.tight_layout()
    return _save(fig, path)
