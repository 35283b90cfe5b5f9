"""Figure rendering for evaluation and volume reports (written to files, Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GRID_COLUMNS = ("LR", "Bicubic", "SR", "HR")


def _show(ax, img, title=None):
    ax.imshow(img, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest", aspect="auto")
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title, fontsize=9)


def comparison_grid(rows: Sequence[dict], path, title: str | None = None) -> Path:
    """One row per example, columns LR | Bicubic | SR | HR.

    Each row dict carries the four images under lowercase keys plus an
    optional ``label``.  The LR panel is shown at its native pixel grid.
    """
    path = Path(path)
    n = len(rows)
    fig, axes = plt.subplots(n, 4, figsize=(8, 2.1 * n), squeeze=False)
    for i, row in enumerate(rows):
        for j, key in enumerate(GRID_COLUMNS):
            _show(axes[i, j], row[key.lower()], key if i == 0 else None)
        if row.get("label"):
            axes[i, 0].set_ylabel(row["label"], fontsize=7)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def metrics_bars(report, path) -> Path:
    """Side-by-side PSNR / SSIM bars per method."""
    path = Path(path)
    names = [r.method_name for r in report.rows]
    psnrs = [np.nan if r.mean_psnr_db is None else r.mean_psnr_db for r in report.rows]
    ssims = [r.mean_ssim for r in report.rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(max(6, 1.4 * len(names)), 3.2))
    x = np.arange(len(names))
    a1.bar(x, psnrs, color="0.35")
    a1.set_ylabel("PSNR [dB]")
    a2.bar(x, ssims, color="0.6")
    a2.set_ylabel("SSIM")
    a2.set_ylim(min(0.0, np.nanmin(ssims)), 1.0)
    for ax in (a1, a2):
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
        ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def volume_views(lr, sr, path, hr=None, index: dict | None = None) -> Path:
    """Axial and coronal cuts through LR / SR (/ HR) volumes.

    Volumes are (H, W, D) arrays in [0, 1]; LR may have fewer depth samples
    and is stretched to the SR aspect for display.
    """
    path = Path(path)
    vols = [("LR", lr), ("SR", sr)] + ([("HR", hr)] if hr is not None else [])
    H, W, D = sr.shape
    index = index or {}
    h_idx = index.get("h", H // 2)
    fig, axes = plt.subplots(2, len(vols), figsize=(3 * len(vols), 5), squeeze=False)
    for j, (name, v) in enumerate(vols):
        d_idx = int(round(index.get("d", D // 2) * v.shape[2] / D))
        d_idx = min(d_idx, v.shape[2] - 1)
        _show(axes[0, j], v[:, :, d_idx], f"{name} axial")
        _show(axes[1, j], v[h_idx, :, :].T, f"{name} coronal")
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_png(img: np.ndarray, path) -> Path:
    """8-bit grayscale PNG view of a [0, 1] image (lossy; for inspection only)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.imsave(path, np.clip(img, 0.0, 1.0), cmap="gray", vmin=0.0, vmax=1.0)
    return path
