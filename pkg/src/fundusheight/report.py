"""Figure and table emission: loss curves, metric bar charts, ablation
tables, per-head output grids, and side-by-side inference panels.

Everything renders through the Agg backend straight to files; tables are
plain CSV so they diff cleanly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import torch

TABLE_COLUMNS = ("variant", "ssim", "lpips", "mse", "psnr_db")


def _prep(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _img(t):
    """Tensor or array -> H x W x 3 float array clipped to [0,1]."""
    if torch.is_tensor(t):
        t = t.detach().cpu().numpy()
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 3:
        arr = np.transpose(arr, (1, 2, 0))
    if arr.size and arr.max() > 1.5:  # raw 0..255 input
        arr = arr / 255.0
    return np.clip(arr, 0.0, 1.0)


def plot_loss_curves(rows, path):
    """Per-step training losses from the loss CSV rows."""
    path = _prep(path)
    steps = [r["step"] for r in rows]
    fig, ax = plt.subplots(figsize=(8, 5))
    for key, label in (("total", "generator total"), ("adv", "adversarial"),
                       ("pix", "pixel"), ("per", "perceptual"), ("d_total", "discriminator")):
        ax.plot(steps, [r[key] for r in rows], label=label, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("symlog")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title("training losses")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_table(rows, path, columns=TABLE_COLUMNS):
    """Merged comparison table, one row per variant."""
    path = _prep(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in columns})
    return path


def plot_metric_bars(rows, out_dir, metrics=("ssim", "lpips", "mse", "psnr_db")):
    """One bar chart per metric across sweep variants."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    variants = [str(r["variant"]) for r in rows]
    for metric in metrics:
        values = [r.get(metric) for r in rows]
        keep = [(v, val) for v, val in zip(variants, values) if isinstance(val, (int, float))]
        if not keep:
            continue
        fig, ax = plt.subplots(figsize=(1.5 + 1.2 * len(keep), 4))
        ax.bar([v for v, _ in keep], [val for _, val in keep], color="#4878a8")
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} by variant")
        for tick in ax.get_xticklabels():
            tick.set_rotation(20)
        fig.tight_layout()
        p = out_dir / f"{metric}_bars.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths


def save_head_grid(x, heads, final, target, path):
    """Layer-wise panel: fundus, each head, the aggregate, and the target."""
    path = _prep(path)
    panels = [("fundus", _img(x))]
    panels += [(f"head {i + 1}", _img(h)) for i, h in enumerate(heads)]
    panels.append(("final", _img(final)))
    if target is not None:
        panels.append(("target", _img(target)))
    fig, axes = plt.subplots(1, len(panels), figsize=(2.2 * len(panels), 2.6))
    if len(panels) == 1:
        axes = [axes]
    for ax, (title, img) in zip(axes, panels):
        ax.imshow(img)
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_side_by_side(fundus, prediction, path, titles=("fundus", "prediction")):
    path = _prep(path)
    fig, axes = plt.subplots(1, 2, figsize=(5.2, 2.8))
    for ax, img, title in zip(axes, (fundus, prediction), titles):
        ax.imshow(_img(img))
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_colormap_legend(cmap, path, height_min=0.0, height_max=500.0):
    """Horizontal color bar mapping the height scale in micrometers."""
    path = _prep(path)
    strip = cmap.lut[None, :, :].repeat(12, axis=0)
    fig, ax = plt.subplots(figsize=(6, 1.2))
    ax.imshow(strip, aspect="auto", extent=(height_min, height_max, 0, 1))
    ax.set_yticks([])
    ax.set_xlabel("height (um)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
