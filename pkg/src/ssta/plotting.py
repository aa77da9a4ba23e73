"""Matplotlib figures for attack runs; every helper writes one PNG and closes it."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .image import amplify_diff  # noqa: E402

# no software/version stamp, so reruns give identical bytes
_PNG_META = {"Software": None}


def _show(ax, img, title):
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    ax.imshow(img, cmap="gray" if img.ndim == 2 else None, vmin=0.0, vmax=1.0, interpolation="nearest")
    ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def attack_panel(x, x_adv, mask_inside, path, *, factor=30.0, title=None):
    """Clean image, adversarial image, amplified difference and the final mask side by side."""
    fig, axes = plt.subplots(1, 4, figsize=(8.4, 2.4))
    _show(axes[0], x, "clean")
    _show(axes[1], x_adv, "adversarial")
    _show(axes[2], amplify_diff(x, x_adv, factor), f"difference x{factor:g}")
    _show(axes[3], np.asarray(mask_inside, dtype=float), "mask")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    _save(fig, path)


def saliency_figure(img, smap, masks, path):
    """Input, saliency map and one panel per thresholded mask (``masks`` maps tau to a bool array)."""
    n = 2 + len(masks)
    fig, axes = plt.subplots(1, n, figsize=(2.1 * n, 2.4))
    _show(axes[0], img, "input")
    _show(axes[1], smap, "saliency")
    for ax, (tau, inside) in zip(axes[2:], sorted(masks.items(), reverse=True)):
        _show(ax, np.asarray(inside, dtype=float), f"tau = {tau}")
    fig.tight_layout()
    _save(fig, path)


def metric_bars(aggregates, path):
    """One bar group per metric, one bar per method; ``aggregates`` maps method to metric means."""
    methods = list(aggregates)
    names = [k for k in next(iter(aggregates.values()))]
    fig, axes = plt.subplots(1, len(names), figsize=(2.0 * len(names), 2.6))
    for ax, name in zip(np.atleast_1d(axes), names):
        vals = [aggregates[m].get(name) for m in methods]
        heights = [np.nan if v is None else v for v in vals]
        ax.bar(range(len(methods)), heights, color=["C0", "C1", "C2", "C3"][: len(methods)])
        ax.set_xticks(range(len(methods)))
        ax.set_xticklabels(methods, fontsize=8)
        ax.set_title(name, fontsize=9)
        ax.tick_params(axis="y", labelsize=7)
    fig.tight_layout()
    _save(fig, path)


def iteration_histogram(iterations, path, *, max_iters=500, stage_iters=50):
    """Histogram of iterations-to-success with stage boundaries marked."""
    fig, ax = plt.subplots(figsize=(4.5, 2.8))
    bins = np.arange(0, max_iters + stage_iters, stage_iters / 2)
    ax.hist(iterations, bins=bins, color="C0")
    for b in range(stage_iters, max_iters, stage_iters):
        ax.axvline(b, color="0.8", lw=0.6, zorder=0)
    ax.set_xlabel("iterations to success")
    ax.set_ylabel("images")
    fig.tight_layout()
    _save(fig, path)


def loss_curve(losses, path):
    fig, ax = plt.subplots(figsize=(4.5, 2.8))
    ax.plot(np.arange(1, len(losses) + 1), losses, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    fig.tight_layout()
    _save(fig, path)
