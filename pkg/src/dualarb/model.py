"""Dual-branch arbitrary-scale network: shared RDN encoder, attention fusion,
and a per-pixel sine-activated implicit decoder.

Both contrasts pass through one weight-shared encoder, get nearest-upsampled
to the output grid, and are fused by five residual attention layers. Pixel
values are then decoded independently per pixel from (scales, relative
coordinates) through kernel-1 layers modulated by the fused features, plus a
sine skip off the branch's own upsampled features. Because decoding is
strictly per-pixel, any sub-window of the output can be computed from the
same fused features with bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .geometry import ScaleTask, nearest_upsample, relative_coords, unfold3x3

FUSION_LAYERS = 5
IDF_CONV_LAYERS = 6  # one coordinate embedding + five modulated layers
OMEGA_0 = 30.0


@dataclass(frozen=True)
class ModelConfig:
    num_blocks: int = 4       # residual dense blocks in the encoder
    convs_per_block: int = 4
    growth: int = 16
    base_channels: int = 8
    ca_reduction: int = 4
    sa_kernel: int = 7
    seed: int = 0
    include_scale: bool = True
    include_coord: bool = True
    include_ref_coord: bool = False  # extra coords relative to the ref grid
    use_reference: bool = True
    fusion_bypass: bool = False  # identity fusion for strict-locality testing

    @property
    def idf_width(self) -> int:
        return 9 * self.base_channels

    @property
    def fusion_channels(self) -> int:
        return 2 * self.idf_width

    @property
    def decoder_in_channels(self) -> int:
        n = (2 * int(self.include_scale) + 2 * int(self.include_coord)
             + 2 * int(self.include_ref_coord))
        if n == 0:
            raise ValueError("decoder needs at least one of scale/coord inputs")
        return n

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


DESK_CONFIG = ModelConfig()
FULL_CONFIG = ModelConfig(num_blocks=16, convs_per_block=8, growth=64, base_channels=64)


class _DenseConv(nn.Module):
    def __init__(self, in_ch, growth):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, growth, 3, padding=1)

    def forward(self, x):
        return torch.cat([x, F.relu(self.conv(x))], dim=1)


class ResidualDenseBlock(nn.Module):
    def __init__(self, base_ch, growth, n_convs):
        super().__init__()
        self.convs = nn.Sequential(
            *[_DenseConv(base_ch + i * growth, growth) for i in range(n_convs)]
        )
        self.local_fusion = nn.Conv2d(base_ch + n_convs * growth, base_ch, 1)

    def forward(self, x):
        return x + self.local_fusion(self.convs(x))


class RDN(nn.Module):
    """Residual dense encoder: shallow convs, dense blocks, global fusion."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        g0 = cfg.base_channels
        self.sfe1 = nn.Conv2d(1, g0, 3, padding=1)
        self.sfe2 = nn.Conv2d(g0, g0, 3, padding=1)
        self.blocks = nn.ModuleList(
            [ResidualDenseBlock(g0, cfg.growth, cfg.convs_per_block)
             for _ in range(cfg.num_blocks)]
        )
        self.gff1 = nn.Conv2d(cfg.num_blocks * g0, g0, 1)
        self.gff2 = nn.Conv2d(g0, g0, 3, padding=1)

    def forward(self, x):
        shallow = self.sfe1(x)
        h = self.sfe2(shallow)
        outs = []
        for block in self.blocks:
            h = block(h)
            outs.append(h)
        h = self.gff2(self.gff1(torch.cat(outs, dim=1)))
        return h + shallow


class ChannelAttention(nn.Module):
    def __init__(self, ch, reduction):
        super().__init__()
        hidden = max(1, ch // reduction)
        self.fc1 = nn.Conv2d(ch, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, ch, 1)

    def forward(self, x):
        avg = self.fc2(F.relu(self.fc1(F.adaptive_avg_pool2d(x, 1))))
        mx = self.fc2(F.relu(self.fc1(F.adaptive_max_pool2d(x, 1))))
        return x * torch.sigmoid(avg + mx)


class SpatialAttention(nn.Module):
    def __init__(self, kernel):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel, padding=kernel // 2)

    def forward(self, x):
        gate = self.conv(torch.cat([x.mean(dim=1, keepdim=True),
                                    x.max(dim=1, keepdim=True).values], dim=1))
        return x * torch.sigmoid(gate)


class FusionLayer(nn.Module):
    """conv3x3 - ReLU - conv3x3 - channel attention - spatial attention."""

    def __init__(self, ch, cfg: ModelConfig):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)
        self.ca = ChannelAttention(ch, cfg.ca_reduction)
        self.sa = SpatialAttention(cfg.sa_kernel)

    def forward(self, x):
        h = self.conv2(F.relu(self.conv1(x)))
        return self.sa(self.ca(h))


class FusionBranch(nn.Module):
    """Five residual fusion layers; returns every intermediate map."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(
            [FusionLayer(cfg.fusion_channels, cfg) for _ in range(FUSION_LAYERS)]
        )
        self.bypass = cfg.fusion_bypass

    def forward(self, f0) -> list[torch.Tensor]:
        maps = []
        h = f0
        for layer in self.layers:
            if not self.bypass:
                h = layer(h) + h
            maps.append(h)
        return maps


class ImplicitDecoder(nn.Module):
    """Kernel-1 sine layers modulated per pixel by the fused feature maps."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.idf_width
        self.embed = nn.Conv2d(cfg.decoder_in_channels, w, 1)
        self.layers = nn.ModuleList(
            [nn.Conv2d(w, w, 1) for _ in range(FUSION_LAYERS)]
        )
        self.head = nn.Conv2d(w, 1, 1)

    def forward(self, base, fused_halves: list[torch.Tensor]):
        h = torch.sin(self.embed(base))
        for layer, feat in zip(self.layers, fused_halves):
            h = torch.sin(layer(h) * feat)
        return self.head(h)


class SkipHead(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.conv = nn.Conv2d(cfg.idf_width, 1, 1)

    def forward(self, x):
        return torch.sin(self.conv(x))


def _check_finite(t, where):
    if not torch.isfinite(t).all():
        raise FloatingPointError(f"non-finite activations in {where}")


class DualArbNet(nn.Module):
    """Full network; one forward handles one task (shared dims per batch)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = RDN(config)
        self.fusion = FusionBranch(config)
        self.decoder = ImplicitDecoder(config)
        self.skip = SkipHead(config)
        self.reset_parameters(config.seed)

    # --- initialization ----------------------------------------------------

    def reset_parameters(self, seed: int):
        """Deterministic init: fan-in uniform convs, sine-aware decoder."""
        gen = torch.Generator().manual_seed(int(seed))

        def uniform_(t, bound):
            with torch.no_grad():
                t.copy_(torch.empty_like(t).uniform_(-bound, bound, generator=gen))

        def fan_in_of(conv):
            w = conv.weight
            return w.shape[1] * w.shape[2] * w.shape[3]

        for module in [self.encoder, self.fusion]:
            for m in module.modules():
                if isinstance(m, nn.Conv2d):
                    bound = 1.0 / math.sqrt(fan_in_of(m))
                    uniform_(m.weight, bound)
                    uniform_(m.bias, bound)

        uniform_(self.decoder.embed.weight, OMEGA_0 / fan_in_of(self.decoder.embed))
        sine_convs = list(self.decoder.layers) + [self.decoder.head, self.skip.conv]
        for m in sine_convs:
            uniform_(m.weight, math.sqrt(6.0 / fan_in_of(m)) / OMEGA_0)
        with torch.no_grad():
            self.decoder.embed.bias.zero_()
            for m in sine_convs:
                m.bias.zero_()

    # --- pieces ------------------------------------------------------------

    def encode(self, img: torch.Tensor) -> torch.Tensor:
        """Latent features with 3x3 neighborhoods unfolded into channels."""
        feats = unfold3x3(self.encoder(img))
        _check_finite(feats, "encoder")
        return feats

    def fuse(self, tar_up, ref_up) -> list[torch.Tensor]:
        if tar_up.shape != ref_up.shape:
            raise ValueError(
                f"branch dims differ: {tuple(tar_up.shape)} vs {tuple(ref_up.shape)}"
            )
        return self.fusion(torch.cat([tar_up, ref_up], dim=1))

    def decoder_base(self, task: ScaleTask, batch: int) -> torch.Tensor:
        """Per-pixel decoder input: (s_tar, s_ref, p_y, p_x) channel maps."""
        p = next(self.parameters())
        H, W = task.hr_dims
        chans = []
        if self.config.include_scale:
            s_ref = task.s_tar if not self.config.use_reference else task.s_ref
            for s in (task.s_tar, s_ref):
                chans.append(torch.full((1, H, W), float(s), dtype=p.dtype))
        if self.config.include_coord:
            coords = relative_coords(task.hr_dims, task.tar_dims)
            chans.append(torch.from_numpy(coords).to(p.dtype))
        if self.config.include_ref_coord:
            grid = task.ref_dims if self.config.use_reference else task.tar_dims
            chans.append(torch.from_numpy(
                relative_coords(task.hr_dims, grid)).to(p.dtype))
        base = torch.cat(chans, dim=0).unsqueeze(0).expand(batch, -1, H, W)
        return base.contiguous()

    def split_half(self, fused: torch.Tensor, branch: str) -> torch.Tensor:
        w = self.config.idf_width
        return fused[:, :w] if branch == "tar" else fused[:, w:]

    def decode_branch(self, fused_maps, branch_up, base, branch: str) -> torch.Tensor:
        halves = [self.split_half(f, branch) for f in fused_maps]
        return self.decoder(base, halves) + self.skip(branch_up)

    # --- full forward ------------------------------------------------------

    def prepare(self, img_tar, img_ref, task: ScaleTask):
        """Encode, upsample, and fuse; returns everything decoding needs."""
        tar = self._as_batch(img_tar)
        if not self.config.use_reference:
            ref = tar
        elif img_ref is None:
            raise ValueError("reference image required when use_reference is set")
        else:
            ref = self._as_batch(img_ref)
            if ref.shape[0] != tar.shape[0]:
                raise ValueError("target/reference batch sizes differ")
        if tuple(tar.shape[-2:]) != tuple(task.tar_dims):
            raise ValueError(f"target dims {tuple(tar.shape[-2:])} != task {task.tar_dims}")
        if self.config.use_reference and tuple(ref.shape[-2:]) != tuple(task.ref_dims):
            raise ValueError(f"reference dims {tuple(ref.shape[-2:])} != task {task.ref_dims}")
        tar_up = nearest_upsample(self.encode(tar), task.hr_dims)
        ref_up = tar_up if ref is tar else nearest_upsample(self.encode(ref), task.hr_dims)
        fused = self.fuse(tar_up, ref_up)
        return fused, tar_up, ref_up

    def forward(self, img_tar, img_ref, task: ScaleTask,
                want_ref_output: bool = False, roi=None):
        """Reconstruct the target (optionally also the reference) branch.

        ``roi`` is an HR-grid window (y0, y1, x0, x1). The whole grid is
        always computed and the window cropped afterwards: per-pixel decoding
        makes that equivalent, and it keeps windowed outputs bit-identical to
        crops of the full decode (convolution kernels pick different
        accumulation orders for different tensor shapes, so decoding only the
        window would drift in the last ulp).
        """
        fused, tar_up, ref_up = self.prepare(img_tar, img_ref, task)
        batch = tar_up.shape[0]
        base = self.decoder_base(task, batch)
        sr_tar = self.decode_branch(fused, tar_up, base, "tar")
        _check_finite(sr_tar, "target decode")
        outs = [sr_tar]
        if want_ref_output:
            sr_ref = self.decode_branch(fused, ref_up, base, "ref")
            _check_finite(sr_ref, "reference decode")
            outs.append(sr_ref)
        if roi is not None:
            y0, y1, x0, x1 = roi
            outs = [o[:, :, y0:y1, x0:x1] for o in outs]
        return outs[0] if not want_ref_output else (outs[0], outs[1])

    def _as_batch(self, img) -> torch.Tensor:
        p = next(self.parameters())
        if isinstance(img, np.ndarray):
            img = torch.from_numpy(np.ascontiguousarray(img))
        t = img.to(p.dtype)
        if t.dim() == 2:
            t = t.unsqueeze(0).unsqueeze(0)
        elif t.dim() == 3:
            t = t.unsqueeze(1)
        if t.dim() != 4 or t.shape[1] != 1:
            raise ValueError(f"expected (h,w), (b,h,w) or (b,1,h,w), got {tuple(img.shape)}")
        return t


def named_parameter_arrays(model: DualArbNet) -> dict[str, np.ndarray]:
    return {name: p.detach().cpu().numpy() for name, p in model.named_parameters()}


def load_parameter_arrays(model: DualArbNet, arrays: dict[str, np.ndarray]):
    own = dict(model.named_parameters())
    missing = sorted(set(own) ^ set(arrays))
    if missing:
        raise ValueError(f"parameter name mismatch: {missing}")
    with torch.no_grad():
        for name, arr in arrays.items():
            t = torch.from_numpy(np.ascontiguousarray(arr))
            if tuple(t.shape) != tuple(own[name].shape):
                raise ValueError(
                    f"shape mismatch for {name}: {tuple(t.shape)} vs {tuple(own[name].shape)}"
                )
            own[name].copy_(t.to(own[name].dtype))
