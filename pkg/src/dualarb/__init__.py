"""Dual-arbitrary-scale multi-contrast super-resolution on synthetic phantoms.

Subpackages: phantom (data generation + .mrs IO), kspace (centered FFTs and
the low-frequency-crop degradation), geometry (grids, coordinates, scale
arithmetic), model (encoder / fusion / implicit decoder), losses (objectives
and metrics), trainer (curriculum loop + checkpoints), evaluate (metric
tables, baselines, ablations), service (HTTP reconstruction API).
"""

from .geometry import ScaleTask, effective_scale
from .kspace import degrade, degrade_array, fft2c, ifft2c, lowpass_mask
from .losses import LAMBDA_K, psnr, ssim
from .model import DualArbNet, ModelConfig
from .phantom import PhantomSpec, SliceImage, generate_dataset, generate_phantom
from .trainer import CurriculumSchedule, stage_for_epoch, train

__version__ = "0.1.0"

__all__ = [
    "ScaleTask", "effective_scale",
    "degrade", "degrade_array", "fft2c", "ifft2c", "lowpass_mask",
    "LAMBDA_K", "psnr", "ssim",
    "DualArbNet", "ModelConfig",
    "PhantomSpec", "SliceImage", "generate_dataset", "generate_phantom",
    "CurriculumSchedule", "stage_for_epoch", "train",
    "__version__",
]
