"""Figure rendering for the CLI reports.

Every plotting helper writes a PNG next to the CSV it illustrates; all use
the Agg backend so they work headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .kernels import KernelBank
from .metrics import MetricReport
from .training import FitLog


def save_sharpness_plot(rows, path) -> None:
    """Sharpness score per frame with the selected frames marked."""
    indices = [r[0] for r in rows]
    scores = [r[1] for r in rows]
    picked = [(r[0], r[1]) for r in rows if r[2]]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(indices, scores, lw=1.2, color="tab:blue", label="sharpness")
    if picked:
        px, py = zip(*picked)
        ax.scatter(px, py, marker="o", s=36, color="tab:red", zorder=3, label="selected")
    ax.set_xlabel("frame")
    ax.set_ylabel("variance-of-Laplacian score")
    ax.set_title("per-frame sharpness")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_plot(log: FitLog, path, window: int = 100) -> None:
    """Raw and trailing-mean training loss on a log scale."""
    losses = log.losses()
    if len(losses) == 0:
        return
    steps = [row[0] for row in log.rows]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(steps, losses, lw=0.6, alpha=0.4, color="tab:blue", label="loss")
    if len(losses) >= 2:
        win = min(window, len(losses))
        ax.plot(
            steps,
            log.smoothed_losses(win),
            lw=1.5,
            color="tab:orange",
            label=f"trailing mean ({win})",
        )
    if log.adversarial:
        d = [row[2] for row in log.rows if row[2] is not None]
        if d:
            ax.plot(steps[: len(d)], d, lw=0.6, alpha=0.5, color="tab:green", label="d_loss")
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title("training loss")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_plot(report: MetricReport, path) -> None:
    """One panel per available metric, by frame index."""
    columns = [
        ("psnr", "PSNR (dB)"),
        ("ssim", "SSIM"),
        ("perceptual", "perceptual distance"),
        ("warp", "warping error"),
    ]
    available = []
    for key, label in columns:
        values = [row.get(key) for row in report.rows]
        if any(v is not None for v in values):
            available.append((key, label, values))
    if not available:
        return
    fig, axes = plt.subplots(len(available), 1, figsize=(8, 2.4 * len(available)), squeeze=False)
    frames = [row["frame"] for row in report.rows]
    for ax, (key, label, values) in zip(axes[:, 0], available):
        xs = [f for f, v in zip(frames, values) if v is not None]
        ys = [v for v in values if v is not None]
        ax.plot(xs, ys, lw=1.0, marker=".", ms=4, color="tab:blue")
        ax.set_ylabel(label)
        ax.grid(alpha=0.25)
    axes[-1, 0].set_xlabel("frame")
    fig.suptitle("per-frame quality metrics")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_kernel_montage(bank: KernelBank, path, per_size: int = 8, seed: int = 0) -> None:
    """A grid of sample kernels, one row per kernel size."""
    rng = np.random.default_rng(seed)
    groups = []
    for size in sorted({k.size for k in bank.kernels}):
        same = [k for k in bank.kernels if k.size == size]
        take = min(per_size, len(same))
        picks = rng.choice(len(same), size=take, replace=False)
        groups.append((size, [same[i] for i in sorted(picks)]))
    if not groups:
        return
    cols = max(len(ks) for _, ks in groups)
    fig, axes = plt.subplots(
        len(groups), cols, figsize=(1.4 * cols, 1.6 * len(groups)), squeeze=False
    )
    for r, (size, ks) in enumerate(groups):
        for c in range(cols):
            ax = axes[r, c]
            ax.set_xticks([])
            ax.set_yticks([])
            if c < len(ks):
                ax.imshow(ks[c].weights, cmap="inferno", interpolation="nearest")
                if c == 0:
                    ax.set_ylabel(f"{size}px", fontsize=9)
            else:
                ax.axis("off")
    fig.suptitle("sample blur kernels")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
