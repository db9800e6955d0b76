"""Matplotlib figures rendered next to the delimited reports.

Everything draws through the Agg backend with pinned metadata and dpi so a
rerun with the same inputs produces byte-identical PNG files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

__all__ = ["save_loss_curve", "save_cost_figure", "save_contact_sheet"]

_SAVE = dict(dpi=110, metadata={"Software": "lumix"})


def save_loss_curve(losses: list[tuple[int, float]], path) -> None:
    steps = [s for s, _ in losses]
    values = [v for _, v in losses]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, values, lw=0.8, color="#1f77b4")
    if len(values) >= 20:
        k = max(len(values) // 50, 5)
        smooth = np.convolve(values, np.ones(k) / k, mode="valid")
        ax.plot(steps[k - 1:], smooth, lw=1.6, color="#d62728", label=f"avg({k})")
        ax.legend(frameon=False)
    ax.set_xlabel("step")
    ax.set_ylabel("flow-matching loss")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def save_cost_figure(rows, path) -> None:
    """Grouped bars for the cost-report rows (params / adapter / attention)."""
    attentions = []
    loras = []
    for r in rows:
        if r.attention not in attentions:
            attentions.append(r.attention)
        if r.lora not in loras:
            loras.append(r.lora)
    panels = [("params (M)", lambda r: r.params / 1e6),
              ("adapter GFLOPs", lambda r: r.lora_flops / 1e9),
              ("attention GFLOPs", lambda r: r.attn_flops / 1e9)]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.6))
    width = 0.8 / len(attentions)
    xs = np.arange(len(loras))
    for ax, (title, get) in zip(axes, panels):
        for ai, attn in enumerate(attentions):
            vals = [get(r) for r in rows if r.attention == attn]
            ax.bar(xs + (ai - (len(attentions) - 1) / 2) * width, vals,
                   width=width, label=attn)
        ax.set_xticks(xs)
        ax.set_xticklabels(loras, rotation=20)
        ax.set_title(title, fontsize=10)
        ax.set_yscale("log")
    axes[0].legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def save_contact_sheet(scenes: list[dict[str, np.ndarray]], properties,
                       path, max_scenes: int = 8) -> None:
    """Grid of generated maps: one row per scene, one column per property."""
    shown = scenes[:max_scenes]
    rows, cols = len(shown), len(properties)
    fig, axes = plt.subplots(rows, cols, figsize=(1.6 * cols, 1.6 * rows),
                             squeeze=False)
    for si, maps in enumerate(shown):
        for pi, name in enumerate(properties):
            ax = axes[si][pi]
            img = maps[name]
            if img.ndim == 2:
                ax.imshow(img, cmap="gray", vmin=0.0, vmax=1.0,
                          interpolation="nearest")
            else:
                ax.imshow(np.clip(img, 0.0, 1.0), interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if si == 0:
                ax.set_title(name, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
