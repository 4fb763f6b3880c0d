"""Training losses and image-quality metrics.

The training objective mixes a per-pixel mean absolute error with a
frequency-domain term that penalizes the low-frequency band shared by the
input: the masked difference of centered orthonormal spectra, taken as an
(unsquared) L2 norm. Metrics (PSNR / SSIM) are numpy reference
implementations used by evaluation and tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
from scipy.signal import convolve2d

LAMBDA_K = 0.05

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class LossReport:
    l_rec: float
    l_k: float
    l_full: float
    lambda_k: float

    def to_dict(self) -> dict:
        return asdict(self)


def fft2c_torch(x: torch.Tensor) -> torch.Tensor:
    """Centered orthonormal 2D FFT over the trailing axes (torch twin)."""
    return torch.fft.fftshift(torch.fft.fft2(x, norm="ortho"), dim=(-2, -1))


def rec_loss(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    return (sr - hr).abs().mean()


def k_loss(sr: torch.Tensor, hr: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """L2 norm (not squared) of the masked spectrum difference.

    ``mask`` is broadcast over leading axes; batched inputs average the
    per-image norms.
    """
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    if tuple(mask.shape[-2:]) != tuple(sr.shape[-2:]):
        raise ValueError("mask dims do not match image dims")
    diff = (fft2c_torch(sr) - fft2c_torch(hr)) * mask.to(sr.dtype)
    flat = diff.reshape(*diff.shape[:-2], -1) if diff.dim() > 2 else diff.reshape(1, -1)
    per_image = torch.sqrt((flat.real ** 2 + flat.imag ** 2).sum(dim=-1))
    return per_image.mean()


def full_loss(sr, hr, mask, lambda_k: float = LAMBDA_K,
              use_k: bool = True) -> tuple[torch.Tensor, LossReport]:
    """Combined objective; the report satisfies l_full == l_rec + lambda_k*l_k."""
    if lambda_k < 0:
        raise ValueError("lambda_k must be non-negative")
    l_r = rec_loss(sr, hr)
    if use_k:
        l_k = k_loss(sr, hr, mask)
        total = l_r + lambda_k * l_k
    else:
        l_k = torch.zeros((), dtype=l_r.dtype)
        total = l_r
    rec_val, k_val = float(l_r.detach()), float(l_k.detach())
    report = LossReport(l_rec=rec_val, l_k=k_val,
                        l_full=rec_val + lambda_k * k_val, lambda_k=lambda_k)
    return total, report


# --- metrics (numpy, float64) -----------------------------------------------


def _as_float_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("metrics require finite inputs")
    return a, b


def psnr(a, b, data_range: float = 1.0) -> float:
    a, b = _as_float_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-12:
        return float("inf")
    return 10.0 * math.log10(data_range ** 2 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2D Gaussian kernel (outer product of the 1D profile)."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean structural similarity over all fully valid Gaussian windows."""
    a, b = _as_float_pair(a, b)
    if a.ndim != 2:
        raise ValueError("ssim expects 2D images")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} pixels per side")
    w = gaussian_window()

    def filt(x):
        return convolve2d(x, w, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
