"""Report figures for pipeline runs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import RenderConfig  # noqa: E402

_DPI = 150


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def comparison_panel(images: dict[str, np.ndarray], path, cfg: RenderConfig = RenderConfig(),
                     roi=None) -> Path:
    """Side-by-side axial slices at a fixed display window."""
    n = len(images)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.4))
    axes = np.atleast_1d(axes)
    for ax, (title, img) in zip(axes, images.items()):
        ax.imshow(img, cmap="gray", vmin=cfg.window_low, vmax=cfg.window_high,
                  interpolation="nearest")
        if roi is not None:
            ax.contour(roi, levels=[0.5], colors="tab:orange", linewidths=0.6)
        ax.set_title(title, fontsize=9)
        ax.set_axis_off()
    fig.suptitle(f"window [{cfg.window_low:g}, {cfg.window_high:g}] HU", fontsize=8)
    return _save(fig, path)


def profile_plot(images: dict[str, np.ndarray], row: int, path, spacing: float = 1.0) -> Path:
    """HU along one image row for each image."""
    fig, ax = plt.subplots(figsize=(6, 3))
    for label, img in images.items():
        x = (np.arange(img.shape[1]) - (img.shape[1] - 1) / 2.0) * spacing
        ax.plot(x, img[row], lw=0.9, label=label)
    ax.set_xlabel("x [mm]")
    ax.set_ylabel("HU")
    ax.set_ylim(-300, 1600)
    ax.legend(fontsize=7, frameon=False)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def metric_bars(rows: list[dict], key: str, path, ylabel: str) -> Path:
    fig, ax = plt.subplots(figsize=(4, 3))
    names = [r["image"] for r in rows]
    vals = [r[key] for r in rows]
    ax.bar(names, vals, color=plt.cm.tab10.colors[: len(vals)])
    ax.set_ylabel(ylabel)
    ax.tick_params(axis="x", labelrotation=20, labelsize=8)
    return _save(fig, path)


def sinogram_figure(sino: np.ndarray, trace, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.imshow(sino, cmap="gray", aspect="auto", interpolation="nearest")
    if trace is not None and np.any(trace):
        ax.contour(trace, levels=[0.5], colors="tab:red", linewidths=0.5)
    ax.set_xlabel("detector bin")
    ax.set_ylabel("view")
    return _save(fig, path)
