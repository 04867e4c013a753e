"""Fidelity metrics: PSNR and windowed SSIM, plus report emission.

Pure numpy functions over [0,1] float images in (C,H,W) or (H,W) layout.
SSIM uses the reference constants: 11x11 Gaussian window with sigma 1.5,
K1=0.01, K2=0.03, dynamic range 1, evaluated on the channel-mean grayscale
image over valid window positions only.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(x: np.ndarray, y: np.ndarray, max_value: float = 1.0) -> float:
    """10*log10(max^2 / MSE) in decibels, capped at 100 for identical input."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"psnr: shape mismatch {x.shape} vs {y.shape}")
    err = float(np.mean((x - y) ** 2))
    if err <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(max_value ** 2 / err))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # separable valid-mode correlation
    win = np.lib.stride_tricks.sliding_window_view(img, len(kernel), axis=0)
    img = win @ kernel
    win = np.lib.stride_tricks.sliding_window_view(img, len(kernel), axis=1)
    return win @ kernel


def _to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img.mean(axis=0)
    if img.ndim == 2:
        return img
    raise ValueError(f"expected (C,H,W) or (H,W) image, got {img.shape}")


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Mean local structural similarity over valid window positions."""
    gx, gy = _to_gray(x), _to_gray(y)
    if gx.shape != gy.shape:
        raise ValueError(f"ssim: shape mismatch {gx.shape} vs {gy.shape}")
    if min(gx.shape) < SSIM_WINDOW:
        raise ValueError(f"image {gx.shape} smaller than the "
                         f"{SSIM_WINDOW}x{SSIM_WINDOW} window")
    k = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _filter_valid(gx, k)
    mu_y = _filter_valid(gy, k)
    xx = _filter_valid(gx * gx, k) - mu_x * mu_x
    yy = _filter_valid(gy * gy, k) - mu_y * mu_y
    xy = _filter_valid(gx * gy, k) - mu_x * mu_y
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    """Per-image fidelity values plus their dataset means.

    The lpips list is an optional slot for externally computed perceptual
    distances; nothing in this package fills it.
    """

    image_ids: List[str] = field(default_factory=list)
    psnr_db: List[float] = field(default_factory=list)
    ssim: List[float] = field(default_factory=list)
    lpips: Optional[List[float]] = None

    def add(self, image_id: str, psnr_value: float, ssim_value: float) -> None:
        self.image_ids.append(image_id)
        self.psnr_db.append(float(psnr_value))
        self.ssim.append(float(ssim_value))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_db)) if self.psnr_db else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["image_id", "psnr_db", "ssim"])
        for i, img in enumerate(self.image_ids):
            writer.writerow([img, f"{self.psnr_db[i]:.6f}",
                             f"{self.ssim[i]:.6f}"])
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "count": len(self.image_ids),
            "mean_psnr_db": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "mean_lpips": (float(np.mean(self.lpips))
                           if self.lpips else None),
            "images": [
                {"id": img, "psnr_db": self.psnr_db[i], "ssim": self.ssim[i]}
                for i, img in enumerate(self.image_ids)
            ],
        }
        return json.dumps(payload, indent=2)
