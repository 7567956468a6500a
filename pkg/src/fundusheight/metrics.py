"""Evaluation metrics: MSE, PSNR, SSIM, discriminator-feature LPIPS, and
the aggregate report over a test split.

All image metrics work on [0,1]-valued arrays (H x W x 3 numpy, or torch
CHW/BCHW, converted internally) in float64. LPIPS is the sum over frozen
discriminator taps of squared L2 feature distance normalized by each tap's
element count; the discriminator must come from an explicit checkpoint so
the metric is never computed against moving training weights. A derived
mean absolute height error in micrometers (via the codec) is reported
alongside the standard image metrics because it is the clinically
meaningful unit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import correlate1d

from . import trainer as _trainer
from .checkpoints import state_digest
from .codec import DEFAULT_HEIGHT_MAX_UM, DEFAULT_HEIGHT_MIN_UM, ColorMap, decode_height
from .errors import DataError, ShapeError


def _to_hwc(img):
    if torch.is_tensor(img):
        img = img.detach().cpu().numpy()
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] in (1, 3) and arr.shape[2] not in (1, 3):
        arr = np.transpose(arr, (1, 2, 0))
    return arr


def _pair(a, b):
    a, b = _to_hwc(a), _to_hwc(b)
    if a.shape != b.shape:
        raise ShapeError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, max_value=1.0, cap_db=100.0):
    """10*log10(max^2 / mse), returning cap_db for identical images."""
    err = mse(a, b)
    if err == 0.0:
        return float(cap_db)
    return float(min(10.0 * math.log10(max_value**2 / err), cap_db))


def _gaussian_window(size, sigma):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _ssim_channel(a, b, kernel, k1, k2, max_value):
    r = len(kernel) // 2

    def smooth(img):
        out = correlate1d(img, kernel, axis=0)
        out = correlate1d(out, kernel, axis=1)
        return out[r:-r, r:-r]  # keep only windows fully inside the image

    mu1, mu2 = smooth(a), smooth(b)
    s11 = smooth(a * a) - mu1**2
    s22 = smooth(b * b) - mu2**2
    s12 = smooth(a * b) - mu1 * mu2
    c1 = (k1 * max_value) ** 2
    c2 = (k2 * max_value) ** 2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1**2 + mu2**2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def ssim(a, b, window_size=11, sigma=1.5, k1=0.01, k2=0.03, max_value=1.0):
    """Mean SSIM over valid sliding windows, averaged across channels."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    h, w = a.shape[:2]
    if h < window_size or w < window_size:
        raise ShapeError(f"image {h}x{w} is smaller than the {window_size}-px SSIM window")
    kernel = _gaussian_window(window_size, sigma)
    vals = [
        _ssim_channel(a[:, :, c], b[:, :, c], kernel, k1, k2, max_value)
        for c in range(a.shape[2])
    ]
    return float(np.mean(vals))


def _as_batch(img):
    if torch.is_tensor(img):
        t = img.detach().float()
        if t.ndim == 3:
            t = t.unsqueeze(0)
        return t
    arr = _to_hwc(img)
    return torch.from_numpy(np.transpose(arr, (2, 0, 1))[None].astype(np.float32))


def lpips(y, y_hat, x, d_frozen):
    """Feature-space distance between (x,y) and (x,y_hat) tap activations.

    Sum over taps of ||D_i(x,y) - D_i(x,y_hat)||^2 / (w_i*h_i*d_i),
    accumulated in float64 and averaged over the batch. Note the squared
    L2 here, unlike the L1 of the training-time perceptual loss.
    """
    xb, yb, hb = _as_batch(x), _as_batch(y), _as_batch(y_hat)
    d_frozen.eval()
    with torch.no_grad():
        _, taps_a = d_frozen(xb, yb)
        _, taps_b = d_frozen(xb, hb)
    total = 0.0
    batch = xb.shape[0]
    for ta, tb, count in zip(taps_a.features, taps_b.features, taps_a.element_counts()):
        diff = ta.double() - tb.double()
        total += float((diff**2).sum()) / (count * batch)
    return total


def load_eval_discriminator(ckpt_path):
    """Load the frozen evaluation discriminator from a training checkpoint.

    Raises a checkpoint error when the path is missing; evaluation never
    falls back to whatever weights happen to be in memory.
    """
    ckpt = _trainer.load_full(ckpt_path)
    _, disc = _trainer.models_from_checkpoint(ckpt)
    disc.eval()
    for p in disc.parameters():
        p.requires_grad_(False)
    return disc, state_digest(ckpt.discriminator_state)


PER_SAMPLE_COLUMNS = ("id", "ssim", "psnr", "mse", "lpips", "mae_um")


@dataclass
class MetricReport:
    ssim: float
    psnr_db: float
    mse: float
    lpips: float
    mae_um: float
    n_samples: int
    per_sample: list = field(default_factory=list)
    d_checkpoint_digest: str | None = None

    def to_json(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)
        return path

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=PER_SAMPLE_COLUMNS)
            writer.writeheader()
            for row in self.per_sample:
                writer.writerow({k: row[k] for k in PER_SAMPLE_COLUMNS})
        return path


def _mae_um(pred, target, cmap, height_min, height_max):
    p = decode_height(np.clip(_to_hwc(pred), 0.0, 1.0), cmap, height_min, height_max)
    t = decode_height(np.clip(_to_hwc(target), 0.0, 1.0), cmap, height_min, height_max)
    return float(np.mean(np.abs(p.values - t.values)))


def evaluate(
    model,
    testset,
    d_frozen,
    cmap=None,
    height_min=DEFAULT_HEIGHT_MIN_UM,
    height_max=DEFAULT_HEIGHT_MAX_UM,
    d_digest=None,
    purpose="test-eval",
):
    """Per-sample metrics plus their means over a TensorSplit.

    `model` is any callable mapping a B x 3 x H x W batch to predictions
    (a tensor or an object with a .final tensor) and is run under no_grad.
    """
    if testset is None or len(testset) == 0:
        raise DataError("cannot evaluate an empty test set")
    cmap = cmap or ColorMap()
    rows = []
    with torch.no_grad():
        for i in range(len(testset)):
            x, y = testset.take([i], purpose)
            out = model(x)
            pred = out.final if hasattr(out, "final") else out
            pred_i, y_i, x_i = pred[0], y[0], x[0]
            rows.append(
                {
                    "id": testset.ids[i],
                    "ssim": ssim(pred_i, y_i),
                    "psnr": psnr(pred_i, y_i),
                    "mse": mse(pred_i, y_i),
                    "lpips": lpips(pred_i, y_i, x_i, d_frozen),
                    "mae_um": _mae_um(pred_i, y_i, cmap, height_min, height_max),
                }
            )
    return MetricReport(
        ssim=float(np.mean([r["ssim"] for r in rows])),
        psnr_db=float(np.mean([r["psnr"] for r in rows])),
        mse=float(np.mean([r["mse"] for r in rows])),
        lpips=float(np.mean([r["lpips"] for r in rows])),
        mae_um=float(np.mean([r["mae_um"] for r in rows])),
        n_samples=len(rows),
        per_sample=rows,
        d_checkpoint_digest=d_digest,
    )
