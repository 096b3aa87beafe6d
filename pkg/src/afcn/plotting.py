"""Matplotlib figures written next to the CSV outputs."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import CLASS_NAMES  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 110,
    "savefig.bbox": "tight",
}


def figure_size(scale=1.0, ratio=None):
    width = 6.4 * scale
    ratio = ratio or (math.sqrt(5.0) - 1.0) / 2.0
    return width, width * ratio


def plot_attention(spec_grid, attention_up, path, title=None, frame_shift_ms=10.0,
                   bin_hz=20.0):
    """Spectrogram on top, upsampled attention below; brighter = larger weight."""
    frames = spec_grid.shape[1]
    extent = (0, frames * frame_shift_ms / 1000.0, 0, spec_grid.shape[0] * bin_hz / 1000.0)
    with plt.rc_context(STYLE):
        fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=figure_size(1.0, 0.9))
        top.imshow(np.log1p(spec_grid), origin="lower", aspect="auto", cmap="magma",
                   extent=extent)
        top.set_ylabel("kHz")
        if title:
            top.set_title(title)
        im = bottom.imshow(attention_up, origin="lower", aspect="auto", cmap="gray",
                           extent=extent, vmin=0)
        bottom.set_ylabel("kHz")
        bottom.set_xlabel("time (s)")
        fig.colorbar(im, ax=bottom, label="attention weight")
        fig.savefig(path)
        plt.close(fig)


def plot_training_curve(history, path):
    epochs = [h.epoch for h in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figure_size(0.8))
        ax.plot(epochs, [h.train_loss for h in history], "k-", label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy")
        val_wa = [h.val_wa for h in history]
        if not all(np.isnan(val_wa)):
            ax2 = ax.twinx()
            ax2.plot(epochs, val_wa, "C0--", label="val WA")
            ax2.plot(epochs, [h.val_ua for h in history], "C1:", label="val UA")
            ax2.set_ylim(0, 1.02)
            ax2.set_ylabel("accuracy")
            ax2.legend(loc="center right")
        ax.legend(loc="upper right")
        fig.savefig(path)
        plt.close(fig)


def plot_confusion(counts, path, title=None):
    k = counts.shape[0]
    names = CLASS_NAMES[:k]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figure_size(0.6, 1.0))
        ax.imshow(counts, cmap="Blues")
        for i in range(k):
            for j in range(k):
                ax.text(j, i, str(int(counts[i, j])), ha="center", va="center")
        ax.set_xticks(range(k), names, rotation=45)
        ax.set_yticks(range(k), names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        if title:
            ax.set_title(title)
        fig.savefig(path)
        plt.close(fig)
