"""SVG figures for the CLI reports.

Output is byte-stable for identical inputs: the SVG hash salt is pinned and
the date metadata dropped.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SIZE_PT = 800
MAX_MARKER_AREA = 2500.0  # points^2 for the heaviest prototype

_STYLE = {
    "svg.hashsalt": "srgwdr",
    "svg.fonttype": "none",
    "font.size": 14,
    "axes.prop_cycle": plt.cycler(color=plt.get_cmap("tab10").colors),
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_embedding(Z, weights, path, labels=None, title=None) -> Path:
    """Scatter of prototype coordinates with marker area proportional to the
    prototype weight; empty prototypes are left out.

    Only the first two coordinates are drawn. The marker group carries the
    SVG id ``prototypes``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    keep = w > 1e-12
    if Z.shape[1] == 1:
        Z = np.column_stack([Z[:, 0], np.zeros(Z.shape[0])])
    with plt.rc_context(_STYLE):
        fig = plt.figure(figsize=(SIZE_PT / 72, SIZE_PT / 72), dpi=72)
        ax = fig.add_axes([0.05, 0.05, 0.9, 0.9])
        ax.set_axis_off()
        if labels is None:
            colors = "C0"
        else:
            lab = np.asarray(labels)[keep]
            cmap = plt.get_cmap("tab10")
            colors = [cmap(int(l) % 10) if l >= 0 else (0.5, 0.5, 0.5, 1.0) for l in lab]
        if keep.any():
            area = MAX_MARKER_AREA * w[keep] / w[keep].max()
            ax.scatter(
                Z[keep, 0], Z[keep, 1], s=area, c=colors, alpha=0.8,
                edgecolors="black", linewidths=0.5, gid="prototypes",
            )
            pad = 0.15 * max(np.ptp(Z[keep, 0]), np.ptp(Z[keep, 1]), 1e-6)
            ax.set_xlim(Z[keep, 0].min() - pad, Z[keep, 0].max() + pad)
            ax.set_ylim(Z[keep, 1].min() - pad, Z[keep, 1].max() + pad)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_prototype_images(images, weights, path) -> Path:
    """Grid of per-prototype mean images for nonempty prototypes."""
    w = np.asarray(weights, dtype=np.float64)
    idx = np.flatnonzero(w > 1e-12)
    cols = max(1, int(np.ceil(np.sqrt(idx.size))))
    rows = max(1, int(np.ceil(idx.size / cols)))
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(
            rows, cols, figsize=(SIZE_PT / 72, SIZE_PT / 72), dpi=72, squeeze=False
        )
        for ax in axes.ravel():
            ax.set_axis_off()
        for ax, j in zip(axes.ravel(), idx):
            ax.imshow(images[j], cmap="gray", interpolation="nearest")
            ax.set_title(f"{j}: {w[j]:.3f}", fontsize=10)
        return _save(fig, path)


def plot_alpha_grid(alphas, scores, path, alpha_star=None) -> Path:
    """Selection score across the alpha grid (grid points evenly spaced)."""
    alphas = list(alphas)
    x = np.arange(len(alphas))
    with plt.rc_context(_STYLE):
        fig = plt.figure(figsize=(SIZE_PT / 72, SIZE_PT / 144), dpi=72)
        ax = fig.add_axes([0.1, 0.2, 0.85, 0.7])
        for key, vals in scores.items():
            ax.plot(x, np.asarray(vals, dtype=float), marker="o", label=key)
        if alpha_star is not None and alpha_star in alphas:
            ax.axvline(alphas.index(alpha_star), color="gray", linestyle="--", lw=1)
        ax.set_xticks(x)
        ax.set_xticklabels([f"{a:g}" for a in alphas], rotation=45, ha="right")
        ax.set_xlabel("alpha")
        ax.legend(frameon=False)
        return _save(fig, path)
