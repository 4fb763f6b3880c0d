"""Centered orthonormal Fourier transforms and low-frequency-crop degradation.

Low resolution images are produced by keeping only the centered block of the
spectrum: transform, crop, inverse transform, take the magnitude. For a
scale factor k with both dims divided by k this retains exactly 1/k^2 of the
coefficients. The same centered window backs the frequency-domain loss mask,
so crop and mask can never disagree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import round_half_up
from .phantom import SliceImage


@dataclass
class KSpaceGrid:
    """DC-centered complex spectrum under the orthonormal convention."""

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.ndim != 2:
            raise ValueError(f"coeffs must be 2D, got shape {self.coeffs.shape}")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("k-space coefficients must be finite")

    @property
    def dims(self) -> tuple[int, int]:
        return self.coeffs.shape

    def energy(self) -> float:
        return float(np.sum(np.abs(self.coeffs) ** 2))


@dataclass
class FrequencyMask:
    """{0,1} mask over a DC-centered grid; ones form one centered block."""

    values: np.ndarray
    passband_dims: tuple[int, int]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = self.passband_dims[0] * self.passband_dims[1]
        if int(self.values.sum()) != expected:
            raise ValueError(
                f"mask has {int(self.values.sum())} ones, expected {expected}"
            )


def crop_window(full: int, keep: int) -> slice:
    """Centered index window keeping ``keep`` of ``full`` samples.

    DC sits at index full//2 and stays at keep//2 of the cropped axis; for
    even sizes this spans [full/2 - keep/2, full/2 + keep/2).
    """
    if keep > full or keep < 1:
        raise ValueError(f"cannot keep {keep} of {full} samples")
    start = full // 2 - keep // 2
    return slice(start, start + keep)


def _as_pixels(img) -> np.ndarray:
    x = img.pixels if isinstance(img, SliceImage) else np.asarray(img)
    if x.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite values")
    return np.asarray(x, dtype=np.float64)


def fft2c(img) -> KSpaceGrid:
    """Orthonormal 2D FFT with the zero frequency moved to the center."""
    x = _as_pixels(img)
    return KSpaceGrid(np.fft.fftshift(np.fft.fft2(x, norm="ortho")))


def ifft2c(k: KSpaceGrid) -> np.ndarray:
    """Inverse of :func:`fft2c`; returns the complex image."""
    c = k.coeffs if isinstance(k, KSpaceGrid) else np.asarray(k, dtype=np.complex128)
    return np.fft.ifft2(np.fft.ifftshift(c), norm="ortho")


def central_crop(k: KSpaceGrid, out_dims: tuple[int, int]) -> KSpaceGrid:
    """Keep the centered out_dims block, relabeled as its own centered grid."""
    H, W = k.dims
    h, w = out_dims
    if h > H or w > W:
        raise ValueError(f"crop {h}x{w} exceeds input {H}x{W}")
    return KSpaceGrid(k.coeffs[crop_window(H, h), crop_window(W, w)])


def zero_pad(k: KSpaceGrid, out_dims: tuple[int, int]) -> KSpaceGrid:
    """Embed a centered grid into a larger centered grid (crop's adjoint)."""
    H, W = out_dims
    h, w = k.dims
    if h > H or w > W:
        raise ValueError(f"cannot pad {h}x{w} into {H}x{W}")
    out = np.zeros((H, W), dtype=np.complex128)
    out[crop_window(H, h), crop_window(W, w)] = k.coeffs
    return KSpaceGrid(out)


def lowpass_mask(hr_dims: tuple[int, int], lr_dims: tuple[int, int]) -> FrequencyMask:
    """Ones exactly on the central crop window for lr_dims, zeros elsewhere."""
    H, W = hr_dims
    h, w = lr_dims
    if h > H or w > W:
        raise ValueError(f"passband {h}x{w} exceeds grid {H}x{W}")
    m = np.zeros((H, W), dtype=np.float64)
    m[crop_window(H, h), crop_window(W, w)] = 1.0
    return FrequencyMask(m, (h, w))


def lr_dims_for_scale(hr_dims: tuple[int, int], k: float) -> tuple[int, int]:
    if k < 1.0:
        raise ValueError(f"scale must be >= 1, got {k}")
    return round_half_up(hr_dims[0] / k), round_half_up(hr_dims[1] / k)


def degrade_array(pixels, k: float) -> np.ndarray:
    """Low-pass a raw HR array down to dims (round(H/k), round(W/k)).

    Pipeline: centered FFT, central crop, inverse FFT, complex magnitude,
    then sqrt(N_lr / N_hr) intensity compensation so constant images keep
    their value at every scale. Returns float64.
    """
    x = _as_pixels(pixels)
    lr_dims = lr_dims_for_scale(x.shape, k)
    cropped = central_crop(fft2c(x), lr_dims)
    n_hr = x.shape[0] * x.shape[1]
    n_lr = lr_dims[0] * lr_dims[1]
    return np.abs(ifft2c(cropped)) * np.sqrt(n_lr / n_hr)


def degrade(img_hr: SliceImage, k: float) -> SliceImage:
    """SliceImage wrapper around :func:`degrade_array` (float32 payload)."""
    lr = degrade_array(img_hr.pixels, k)
    return SliceImage(
        pixels=lr.astype(np.float32),
        contrast=img_hr.contrast,
        subject_id=img_hr.subject_id,
        slice_id=img_hr.slice_id,
        norm_max=img_hr.norm_max,
    )
