"""Figures written next to the delimited outputs.

Everything renders off-screen through the Agg backend; callers pass a target
path and get a PNG.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_loss_analysis(raw, smoothed, cqi, mu, plan=None, path="curves.png", title=None):
    """Four panels: raw/smoothed loss, CQI vs threshold, loss with markers, log loss.

    ``cqi`` holds values for epochs 2..M.  ``plan`` may be None when the run
    did not converge or could not be segmented.
    """
    raw = np.asarray(raw)
    epochs = np.arange(1, raw.size + 1)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 2, figsize=(8, 5.5))
        ax = axes[0, 0]
        ax.plot(epochs, raw, lw=0.8, color="0.6", label="raw")
        ax.plot(epochs, smoothed, lw=1.2, color="C0", label="smoothed")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_title("(a) loss before and after smoothing")
        ax.legend(frameon=False)

        ax = axes[0, 1]
        ax.semilogy(epochs[1:], np.maximum(cqi, 1e-300), lw=1.0, color="C1", label="CQI")
        ax.axhline(mu, ls="--", lw=0.8, color="k", label=f"threshold {mu:g}")
        if plan is not None:
            ax.axvline(plan.convergence_epoch, ls=":", color="C3", lw=0.8,
                       label=f"converged at {plan.convergence_epoch}")
        ax.set_xlabel("epoch")
        ax.set_title("(b) convergence indicator")
        ax.legend(frameon=False)

        ax = axes[1, 0]
        ax.plot(epochs, smoothed, lw=1.2, color="C0")
        ax.set_xlabel("epoch")
        ax.set_ylabel("smoothed loss")
        ax.set_title("(c) epoch markers")

        ax = axes[1, 1]
        logs = np.log(np.asarray(smoothed))
        ax.plot(epochs, logs, lw=1.2, color="C2")
        ax.set_xlabel("epoch")
        ax.set_ylabel("log smoothed loss")
        ax.set_title("(d) equal log-loss phases")

        if plan is not None:
            base = logs[plan.baseline_epoch - 1]
            for k, m in enumerate(plan.markers, 1):
                axes[1, 0].axvline(m, color="C3", lw=0.6, alpha=0.7)
                axes[1, 1].axvline(m, color="C3", lw=0.6, alpha=0.7)
                axes[1, 1].axhline(base - k * plan.per_phase_drop, color="0.7", lw=0.5, ls="--")
            axes[1, 0].set_title(f"(c) epoch markers {list(plan.markers)}", fontsize=8)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_confusion(confusion, path, title="FMCS confusion (test split)"):
    cm = np.asarray(confusion)
    k = cm.shape[0]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(0.5 * k + 2.5, 0.5 * k + 2.0))
        im = ax.imshow(cm, cmap="Blues")
        for i in range(k):
            for j in range(k):
                ax.text(j, i, str(cm[i, j]), ha="center", va="center", fontsize=7,
                        color="white" if cm[i, j] > cm.max() / 2 else "black")
        ticks = np.arange(k)
        ax.set_xticks(ticks, [str(t + 1) for t in ticks])
        ax.set_yticks(ticks, [str(t + 1) for t in ticks])
        ax.set_xlabel("predicted score")
        ax.set_ylabel("true score")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        return _save(fig, path)


def plot_heatmaps(heatmaps, captions, path, title="Grad-CAM"):
    n = len(heatmaps)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, max(n, 1), figsize=(1.6 * max(n, 1), 1.9), squeeze=False)
        for ax, hm, cap in zip(axes[0], heatmaps, captions):
            ax.imshow(hm, cmap="jet", vmin=0.0, vmax=1.0, interpolation="bilinear")
            ax.set_title(cap, fontsize=7)
            ax.axis("off")
        fig.suptitle(title)
        return _save(fig, path)


def plot_training_loss(losses, path, title="FMCE-Net training loss"):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 2.6))
        ax.plot(np.arange(1, len(losses) + 1), losses, marker="o", ms=2, lw=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy")
        ax.set_title(title)
        return _save(fig, path)
