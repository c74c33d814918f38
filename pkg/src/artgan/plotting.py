"""Figure rendering for the report paths (written next to the CSV/JSON)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .survey import CRITERIA, GROUPS


def save_survey_figure(report, path) -> None:
    """Grouped bars comparing real vs generated means, std as error bars."""
    idx = np.arange(len(CRITERIA))
    width = 0.38
    fig, ax = plt.subplots(figsize=(7, 4))
    for off, group in zip((-width / 2, width / 2), GROUPS):
        means = [report.criteria[c][group]["mean"] for c in CRITERIA]
        stds = [report.criteria[c][group]["std"] for c in CRITERIA]
        ax.bar(idx + off, means, width, yerr=stds, capsize=4, label=group)
    ax.set_xticks(idx)
    ax.set_xticklabels([c.capitalize() for c in CRITERIA])
    ax.set_ylabel("mean score (1-5)")
    ax.set_ylim(0, 5)
    ax.legend()
    ax.set_title("Case study: real vs generated artworks")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_curves(loss_d, loss_g, fid_history, path) -> None:
    """Loss curves and the FID trajectory, one panel each."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(loss_d, label="discriminator", lw=0.8)
    axes[0].plot(loss_g, label="generator", lw=0.8)
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("loss")
    axes[0].legend()
    axes[0].set_title("Adversarial losses")
    if fid_history:
        iters, values = zip(*fid_history)
        axes[1].plot(iters, values, marker="o", ms=3)
    axes[1].set_xlabel("iteration")
    axes[1].set_ylabel("FID (built-in extractor)")
    axes[1].set_title("FID during training")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_figure(report, path) -> None:
    """One bar per headline metric, on separate scales."""
    fig, axes = plt.subplots(1, 2, figsize=(6, 3.5))
    axes[0].bar(["FID"], [report.fid], color="tab:blue")
    axes[0].set_title(f"FID = {report.fid:.2f}")
    axes[1].bar(["KID"], [report.kid_mean], yerr=[report.kid_std],
                capsize=4, color="tab:orange")
    axes[1].set_title(f"KID = {report.kid_mean:.3f}")
    for ax in axes:
        ax.margins(y=0.15)
    fig.suptitle(f"extractor: {report.extractor_id}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_png(image_uint8: np.ndarray, path) -> None:
    """Write one [3,H,W] uint8 image as PNG."""
    Image.fromarray(image_uint8.transpose(1, 2, 0), mode="RGB").save(path)


def save_sample_grid(images_uint8: np.ndarray, path, per_row: int = 8) -> None:
    """Mosaic of [n,3,R,R] uint8 images, ``per_row`` to a row."""
    n, _, r, _ = images_uint8.shape
    cols = min(per_row, n)
    rows = (n + cols - 1) // cols
    canvas = np.zeros((rows * r, cols * r, 3), dtype=np.uint8)
    for i, img in enumerate(images_uint8):
        y, x = divmod(i, cols)
        canvas[y * r:(y + 1) * r, x * r:(x + 1) * r] = img.transpose(1, 2, 0)
    Image.fromarray(canvas, mode="RGB").save(path)
