"""SVG figures for accuracy and timing summaries.

Figures are written with a fixed SVG hash salt and no date metadata, so the
same inputs give byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bench import ARCH_ORDER, VARIANT_LABELS, VARIANT_ORDER  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "axes.grid.axis": "y",
    "grid.alpha": 0.3,
    "svg.hashsalt": "rawbench",
    "svg.fonttype": "none",
}
ARCH_COLORS = {"tiny-resnet": "#4c72b0", "tiny-vgg": "#dd8452"}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def accuracy_figure(summary: dict, path) -> None:
    """Grouped bars of mean top-1 accuracy with stddev error bars.

    ``summary`` maps ``(variant, arch)`` to ``(..., mean, stddev)``; missing
    entries are drawn as an "absent" label.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 3.2))
        x = np.arange(len(VARIANT_ORDER))
        width = 0.38
        for k, arch in enumerate(ARCH_ORDER):
            offs = x + (k - 0.5) * width
            for xi, v in zip(offs, VARIANT_ORDER):
                entry = summary.get((v.value, arch.value))
                if entry is None:
                    ax.text(xi, 0.5, "absent", rotation=90, ha="center", va="bottom", fontsize=7, color="0.4")
                    continue
                mean, sd = entry[-2:]
                ax.bar(xi, mean * 100, width, yerr=sd * 100, color=ARCH_COLORS[arch.value],
                       label=arch.value if xi == offs[0] else None, capsize=2)
        ax.set_xticks(x, [VARIANT_LABELS[v] for v in VARIANT_ORDER])
        ax.set_ylabel("mean top-1 accuracy (%)")
        ax.set_ylim(0, 100)
        handles, labels = ax.get_legend_handles_labels()
        if handles:
            ax.legend(frameon=False, loc="lower right")
        fig.tight_layout()
        _save(fig, path)


def timing_figure(reports, path) -> None:
    """Stacked bars: conversion (RGB only) plus classification, per variant and arch."""
    conv = {r.variant: r.mean for r in reports if r.stage == "conversion"}
    cls = {(r.variant, r.arch): r.mean for r in reports if r.stage == "classification"}
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(ARCH_ORDER), figsize=(7.2, 3.0), sharey=True)
        for ax, arch in zip(np.atleast_1d(axes), ARCH_ORDER):
            x = np.arange(len(VARIANT_ORDER))
            c_vals = np.array([cls.get((v.value, arch.value), np.nan) for v in VARIANT_ORDER])
            v_vals = np.array([conv.get(v.value, 0.0) if v.conversion_required else 0.0 for v in VARIANT_ORDER])
            ax.bar(x, np.nan_to_num(c_vals), color=ARCH_COLORS[arch.value], label="classification")
            ax.bar(x, v_vals, bottom=np.nan_to_num(c_vals), color="0.6", label="conversion")
            for xi, c in zip(x, c_vals):
                if np.isnan(c):
                    ax.text(xi, 0, "absent", rotation=90, ha="center", va="bottom", fontsize=7, color="0.4")
            ax.set_xticks(x, [VARIANT_LABELS[v].replace(" ", "\n") for v in VARIANT_ORDER], fontsize=7)
            ax.set_title(arch.value)
        np.atleast_1d(axes)[0].set_ylabel("seconds per batch")
        np.atleast_1d(axes)[-1].legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)
