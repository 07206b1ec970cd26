"""Report figures. Every function renders to a file and closes its figure."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pipeline import HIST_RANGE  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _moving_average(y: np.ndarray, window: int) -> np.ndarray:
    window = max(1, min(window, len(y)))
    return np.convolve(y, np.ones(window) / window, mode="valid")


def plot_loss_curve(history: list[dict], path, window: int = 10) -> None:
    steps = np.array([r["step"] for r in history])
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3))
        for key in ("total", "l1"):
            y = np.array([r[key] for r in history])
            axes[0].plot(steps, y, lw=0.6, alpha=0.4)
            ma = _moving_average(y, window)
            axes[0].plot(steps[len(steps) - len(ma):], ma, lw=1.2, label=key)
        axes[0].set_xlabel("step")
        axes[0].set_ylabel("loss")
        axes[0].legend(frameon=False)
        for key in ("staining", "g_gan", "d_loss"):
            axes[1].plot(steps, [r[key] for r in history], lw=0.8, label=key)
        axes[1].set_xlabel("step")
        axes[1].legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)


def plot_stability(images, coefficients, distances, path, source=None) -> None:
    """Row of re-stained outputs, one per dye coefficient, with its Lab distance."""
    panels = ([("input", source.data)] if source is not None else []) + [
        (f"c={c:g}\nΔLab={d:.2f}", img.data) for c, d, img in zip(coefficients, distances, images)
    ]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(panels), figsize=(1.8 * len(panels), 2.2))
        for ax, (title, data) in zip(np.atleast_1d(axes), panels):
            ax.imshow(data)
            ax.set_title(title)
            ax.axis("off")
        fig.savefig(path)
        plt.close(fig)


def plot_dye_histograms(cmp, path, labels=("A", "B")) -> None:
    """Overlaid H and E histograms of two images (the comparison of ``histogram_compare``)."""
    edges = np.linspace(*HIST_RANGE, cmp.bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, figsize=(7, 2.6), sharey=True)
        for ax, dye in zip(axes, ("H", "E")):
            ax.bar(centers, cmp.hist_a[dye], width=width, color="tab:pink", alpha=0.6, label=labels[0])
            ax.bar(centers, cmp.hist_b[dye], width=width, color="tab:blue", alpha=0.5, label=labels[1])
            ax.set_title(f"{dye}  (W1 = {cmp.distance[dye]:.4f})")
            ax.set_xlabel("optical density")
        axes[0].set_ylabel("fraction of pixels")
        axes[0].legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)


def plot_metric_report(report, path) -> None:
    """One small panel per metric: per-pair values and the mean +/- std."""
    n = len(report.names)
    cols = min(4, n)
    rows = int(np.ceil(n / cols))
    with plt.rc_context(RC):
        fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.0 * rows), squeeze=False)
        for k, ax in enumerate(axes.ravel()):
            if k >= n:
                ax.axis("off")
                continue
            vals = report.values[:, k]
            ax.plot(np.zeros_like(vals), vals, "o", ms=3, alpha=0.6)
            ax.errorbar([0.4], [report.mean[k]], yerr=[report.std[k]], fmt="s", color="k", capsize=3)
            ax.set_xlim(-0.5, 0.9)
            ax.set_xticks([])
            ax.set_title(report.names[k])
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
