"""Deterministic sampling geometry shared by the encoder and the decoder.

Everything here uses the pixel-center convention: sample i of an N-cell grid
sits at (i + 0.5) / N. Nearest-source indices are computed in exact integer
arithmetic so upsampling, relative coordinates, and patch bookkeeping can
never disagree by a half pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

MAX_SCALE = 16.0


def round_half_up(x: float) -> int:
    """round() with ties away from zero, used for all size arithmetic."""
    return int(math.floor(x + 0.5))


def src_indices(out_size: int, in_size: int) -> np.ndarray:
    """Nearest source index per output cell: min(in-1, floor((i+0.5)*in/out)).

    Evaluated as (2i+1)*in // (2*out) so ties cannot drift in float math.
    """
    if out_size < 1 or in_size < 1:
        raise ValueError(f"sizes must be positive, got out={out_size} in={in_size}")
    i = np.arange(out_size, dtype=np.int64)
    return np.minimum(in_size - 1, (2 * i + 1) * in_size // (2 * out_size))


def nearest_upsample(f, out_dims: tuple[int, int]):
    """Resample the trailing two axes to ``out_dims`` by nearest source index.

    Works on numpy arrays and torch tensors of any leading shape; with equal
    dims it is the identity mapping.
    """
    H, W = out_dims
    h, w = f.shape[-2], f.shape[-1]
    iy = src_indices(H, h)
    ix = src_indices(W, w)
    if isinstance(f, torch.Tensor):
        iy_t = torch.from_numpy(iy).to(f.device)
        ix_t = torch.from_numpy(ix).to(f.device)
        return f.index_select(-2, iy_t).index_select(-1, ix_t)
    return np.asarray(f)[..., iy[:, None], ix[None, :]]


def unfold3x3(f: torch.Tensor) -> torch.Tensor:
    """Concatenate each pixel's 3x3 neighborhood into channels (9x expansion).

    Channel blocks are ordered row-major over offsets (-1,-1)..(+1,+1), so
    block 4 (offset (0,0)) equals the input. Out-of-bounds neighbors use
    replicate padding.
    """
    squeeze = f.dim() == 3
    if squeeze:
        f = f.unsqueeze(0)
    b, c, h, w = f.shape
    padded = F.pad(f, (1, 1, 1, 1), mode="replicate")
    blocks = [
        padded[:, :, 1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        for dy in (-1, 0, 1)
        for dx in (-1, 0, 1)
    ]
    out = torch.cat(blocks, dim=1)
    return out.squeeze(0) if squeeze else out


def relative_coords(hr_dims: tuple[int, int], grid_dims: tuple[int, int]) -> np.ndarray:
    """Offset of each output pixel center from its nearest grid cell center.

    Returns a (2, H, W) float64 array, channels (p_y, p_x), scaled by twice
    the grid pitch so every entry lies in [-1, 1] and is exactly 0 when the
    centers coincide.
    """
    H, W = hr_dims
    h, w = grid_dims

    def axis(n_out, n_in):
        c = (np.arange(n_out, dtype=np.float64) + 0.5) / n_out
        j = src_indices(n_out, n_in).astype(np.float64)
        center = (j + 0.5) / n_in
        return (c - center) * n_in * 2.0

    py = np.broadcast_to(axis(H, h)[:, None], (H, W))
    px = np.broadcast_to(axis(W, w)[None, :], (H, W))
    return np.stack([py, px])


def effective_scale(lr_size: int, s_nominal: float) -> tuple[int, float]:
    """Snap a nominal scale to the exact ratio realized on an integer grid."""
    if lr_size < 1:
        raise ValueError(f"lr_size must be >= 1, got {lr_size}")
    if s_nominal < 1.0:
        raise ValueError(f"scale must be >= 1, got {s_nominal}")
    hr_size = round_half_up(lr_size * s_nominal)
    return hr_size, hr_size / lr_size


REF_MODES = ("LR", "HR", "custom")


@dataclass(frozen=True)
class ScaleTask:
    """Exact per-branch scales for one reconstruction task.

    ``s_tar``/``s_ref`` are the ratios of the output grid to each input grid
    and are always derived from the integer dims rather than trusted from a
    nominal request.
    """

    s_tar: float
    s_ref: float
    hr_dims: tuple[int, int]
    tar_dims: tuple[int, int]
    ref_dims: tuple[int, int]
    ref_mode: str

    def __post_init__(self):
        if self.ref_mode not in REF_MODES:
            raise ValueError(f"ref_mode must be one of {REF_MODES}, got {self.ref_mode!r}")
        for s, name in ((self.s_tar, "s_tar"), (self.s_ref, "s_ref")):
            if not math.isfinite(s) or not (0.0 < s <= MAX_SCALE):
                raise ValueError(f"{name}={s} outside (0, {MAX_SCALE}]")
        for dims, name in ((self.hr_dims, "hr"), (self.tar_dims, "tar"), (self.ref_dims, "ref")):
            if min(dims) < 1:
                raise ValueError(f"{name}_dims must be positive, got {dims}")
        for in_dims, s, name in ((self.tar_dims, self.s_tar, "target"),
                                 (self.ref_dims, self.s_ref, "reference")):
            ry = self.hr_dims[0] / in_dims[0]
            rx = self.hr_dims[1] / in_dims[1]
            if abs(ry - rx) > 1e-9:
                raise ValueError(
                    f"anisotropic {name} scale rejected: vertical {ry} vs horizontal {rx}"
                )
            if abs(ry - s) > 1e-9:
                raise ValueError(f"s_{name[:3]}={s} inconsistent with dims ratio {ry}")

    @classmethod
    def from_dims(
        cls,
        hr_dims: tuple[int, int],
        tar_dims: tuple[int, int],
        ref_dims: tuple[int, int],
        ref_mode: str = "HR",
    ) -> "ScaleTask":
        return cls(
            s_tar=hr_dims[0] / tar_dims[0],
            s_ref=hr_dims[0] / ref_dims[0],
            hr_dims=tuple(hr_dims),
            tar_dims=tuple(tar_dims),
            ref_dims=tuple(ref_dims),
            ref_mode=ref_mode,
        )
