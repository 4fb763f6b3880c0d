"""Evaluation harness: per-scale PSNR/SSIM tables against interpolation
baselines, error-map export, single-image inference, and the ablation grid.

Scales 1.5/2/3/4 are in-distribution (covered by the training grid); 6 and 8
probe extrapolation. Slice dims that are multiples of 24 keep every LR grid
integral across this whole scale set.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import kspace, phantom
from .geometry import ScaleTask, nearest_upsample, round_half_up
from .losses import psnr, ssim
from .model import DualArbNet, ModelConfig

IN_DIST_SCALES = (1.5, 2.0, 3.0, 4.0)
OOD_SCALES = (6.0, 8.0)
DEFAULT_SCALES = IN_DIST_SCALES + OOD_SCALES

BICUBIC_A = -0.5  # Catmull-Rom: interpolating, reproduces linear ramps


def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    """Keys cubic convolution weights for |t| <= 2."""
    a = BICUBIC_A
    t = np.abs(t)
    w = np.where(
        t <= 1.0,
        (a + 2.0) * t ** 3 - (a + 3.0) * t ** 2 + 1.0,
        np.where(t < 2.0, a * (t ** 3 - 5.0 * t ** 2 + 8.0 * t - 4.0), 0.0),
    )
    return w


def _cubic_axis(arr: np.ndarray, out_size: int, axis: int) -> np.ndarray:
    in_size = arr.shape[axis]
    centers = (np.arange(out_size, dtype=np.float64) + 0.5) / out_size
    u = centers * in_size - 0.5        # fractional source index, pixel centers
    j0 = np.floor(u).astype(np.int64)
    arr = np.moveaxis(arr, axis, 0)
    res = np.zeros((out_size,) + arr.shape[1:])
    for tap in (-1, 0, 1, 2):
        j = np.clip(j0 + tap, 0, in_size - 1)
        res += _cubic_kernel(u - (j0 + tap))[(...,) + (None,) * (arr.ndim - 1)] * arr[j]
    return np.moveaxis(res, 0, axis)


def bicubic_upsample(arr, out_dims: tuple[int, int]) -> np.ndarray:
    """Separable cubic-convolution resize on the pixel-center grid.

    Taps outside the image clamp to the edge sample, so the closed-form
    per-pixel definition (and its test oracle) includes that rule.
    """
    x = np.asarray(arr, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a 2D image")
    x = _cubic_axis(x, out_dims[0], 0)
    return _cubic_axis(x, out_dims[1], 1)


def auto_ref_mode(hr_dims, tar_dims, ref_dims) -> str:
    if tuple(ref_dims) == tuple(hr_dims):
        return "HR"
    if tuple(ref_dims) == tuple(tar_dims):
        return "LR"
    return "custom"


def super_resolve(model: DualArbNet, tar_lr: np.ndarray, ref: np.ndarray,
                  scale: float | None = None,
                  hr_dims: tuple[int, int] | None = None) -> np.ndarray:
    """Reconstruct one slice; output dims round(lr*scale) unless given."""
    tar_lr = np.asarray(tar_lr, dtype=np.float32)
    ref = np.asarray(ref, dtype=np.float32)
    if hr_dims is None:
        if scale is None:
            raise ValueError("need scale or explicit hr_dims")
        hr_dims = (round_half_up(tar_lr.shape[0] * scale),
                   round_half_up(tar_lr.shape[1] * scale))
    mode = auto_ref_mode(hr_dims, tar_lr.shape, ref.shape)
    task = ScaleTask.from_dims(hr_dims, tar_lr.shape, ref.shape, mode)
    model.eval()
    with torch.no_grad():
        sr = model(tar_lr, ref, task)
    return sr[0, 0].numpy()


# --- reports ------------------------------------------------------------------


@dataclass
class EvalReport:
    scales: list
    ref_mode: str
    rows: dict            # str(scale) -> method -> {"psnr": .., "ssim": ..}
    averages: dict        # method -> {"psnr": .., "ssim": ..}
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scales": self.scales,
            "in_distribution": [s for s in self.scales if s in IN_DIST_SCALES],
            "out_of_distribution": [s for s in self.scales if s not in IN_DIST_SCALES],
            "ref_mode": self.ref_mode,
            "rows": self.rows,
            "averages": self.averages,
            "meta": self.meta,
        }

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    def to_markdown(self) -> str:
        methods = sorted(self.averages)
        heads = [f"x{s:g}" for s in self.scales]
        lines = []
        for metric, fmt in (("psnr", "{:.3f}"), ("ssim", "{:.4f}")):
            lines.append(f"### {metric.upper()} (ref {self.ref_mode})")
            lines.append("| method | " + " | ".join(heads) + " | avg |")
            lines.append("|" + "---|" * (len(heads) + 2))
            for m in methods:
                cells = [fmt.format(self.rows[str(float(s))][m][metric])
                         for s in self.scales]
                cells.append(fmt.format(self.averages[m][metric]))
                lines.append(f"| {m} | " + " | ".join(cells) + " |")
            lines.append("")
        return "\n".join(lines)


def _load_pairs(manifest: phantom.DatasetManifest):
    pairs = []
    for entry in manifest.entries:
        t, r = manifest.load_pair(entry)
        pairs.append((t.pixels.astype(np.float64), r.pixels.astype(np.float64)))
    if not pairs:
        raise ValueError(f"empty {manifest.split} manifest")
    return pairs


def eval_model(model: DualArbNet, manifest: phantom.DatasetManifest,
               scales=DEFAULT_SCALES, ref_mode: str = "HR",
               include_identity: bool = False, meta: dict | None = None) -> EvalReport:
    """Metric table over a manifest: model vs nearest vs bicubic per scale."""
    if ref_mode not in ("HR", "LR"):
        raise ValueError("ref_mode must be HR or LR")
    pairs = _load_pairs(manifest)
    methods = ["model", "nearest", "bicubic"] + (["identity"] if include_identity else [])
    rows = {}
    sums = {m: {"psnr": 0.0, "ssim": 0.0} for m in methods}
    for s in scales:
        acc = {m: {"psnr": [], "ssim": []} for m in methods}
        for tar_hr, ref_hr in pairs:
            lr = kspace.degrade_array(tar_hr, s)
            ref = ref_hr if ref_mode == "HR" else kspace.degrade_array(ref_hr, s)
            outs = {
                "model": super_resolve(model, lr, ref, hr_dims=tar_hr.shape)
                .astype(np.float64),
                "nearest": nearest_upsample(lr, tar_hr.shape),
                "bicubic": bicubic_upsample(lr, tar_hr.shape),
            }
            if include_identity:
                outs["identity"] = tar_hr
            for m, out in outs.items():
                acc[m]["psnr"].append(psnr(out, tar_hr))
                acc[m]["ssim"].append(ssim(out, tar_hr))
        rows[str(float(s))] = {
            m: {k: float(np.mean(v)) for k, v in acc[m].items()} for m in methods
        }
        for m in methods:
            for k in ("psnr", "ssim"):
                sums[m][k] += rows[str(float(s))][m][k]
    averages = {m: {k: sums[m][k] / len(scales) for k in ("psnr", "ssim")}
                for m in methods}
    return EvalReport(scales=[float(s) for s in scales], ref_mode=ref_mode,
                      rows=rows, averages=averages, meta=meta or {})


# --- error maps ---------------------------------------------------------------


@dataclass
class ErrorMap:
    values: np.ndarray
    vmax: float
    png_bytes: bytes


def render_gray_png(img: np.ndarray) -> bytes:
    """Clip to [0,1] and encode an 8-bit grayscale PNG."""
    u8 = np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0)
    buf = io.BytesIO()
    Image.fromarray(u8.astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def error_map(sr, hr, colormap: str = "inferno") -> ErrorMap:
    """Absolute-difference map rendered through a fixed colormap.

    The PNG is normalized by vmax (the exact max-abs difference, reported
    alongside so the color scale stays interpretable).
    """
    sr = np.asarray(sr, dtype=np.float64)
    hr = np.asarray(hr, dtype=np.float64)
    if sr.shape != hr.shape:
        raise ValueError(f"dim mismatch: {sr.shape} vs {hr.shape}")
    diff = np.abs(sr - hr)
    vmax = float(diff.max())
    import matplotlib
    cmap = matplotlib.colormaps[colormap]
    normed = diff / vmax if vmax > 0 else np.zeros_like(diff)
    rgba = (cmap(normed) * 255.0).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(rgba[..., :3], mode="RGB").save(buf, format="PNG")
    return ErrorMap(values=diff, vmax=vmax, png_bytes=buf.getvalue())


# --- ablations ------------------------------------------------------------------


ABLATION_VARIANTS = {
    "full": {},
    "no-k-loss": {"use_k": False},
    "wo-ref": {"config": {"use_reference": False}},
    "wo-scale": {"config": {"include_scale": False}},
    "wo-coord": {"config": {"include_coord": False}},
    "strategy-random": {"strategy": "random"},
    "strategy-fixed-hr": {"strategy": "fixed-hr"},
    "strategy-fixed-lr": {"strategy": "fixed-lr"},
}


def ablation_suite(data_dir, out_dir, base_config: ModelConfig | None = None,
                   schedule=None, variants=None, scales=(2.0,),
                   ref_modes=("HR", "LR"), seed: int = 0,
                   steps_per_epoch: int | None = None,
                   eval_split: str = "test") -> dict[str, EvalReport]:
    """Train each requested variant briefly and emit schema-identical reports."""
    from . import trainer

    base_config = base_config or ModelConfig()
    schedule = schedule or trainer.CurriculumSchedule()
    names = list(variants) if variants is not None else list(ABLATION_VARIANTS)
    unknown = [n for n in names if n not in ABLATION_VARIANTS]
    if unknown:
        raise ValueError(f"unknown ablation variants: {unknown}")
    out_dir = Path(out_dir)
    manifest = phantom.load_dataset(data_dir)[eval_split]
    reports = {}
    for name in names:
        spec = ABLATION_VARIANTS[name]
        config = ModelConfig(**{**base_config.to_dict(), **spec.get("config", {})})
        result = trainer.train(
            data_dir, out_dir / name, config=config, schedule=schedule,
            strategy=spec.get("strategy", "cur-random"),
            use_k=spec.get("use_k", True), seed=seed,
            steps_per_epoch=steps_per_epoch, quiet=True,
        )
        state = trainer.load_checkpoint(result.last_path)
        for mode in ref_modes:
            key = f"{name}/ref-{mode.lower()}"
            report = eval_model(state.model, manifest, scales, ref_mode=mode,
                                meta={"variant": name, "strategy":
                                      spec.get("strategy", "cur-random"),
                                      "use_k": spec.get("use_k", True)})
            report.save_json(out_dir / name / f"report_ref-{mode.lower()}.json")
            reports[key] = report
    combined = {k: r.to_dict() for k, r in reports.items()}
    (out_dir / "ablation.json").write_text(json.dumps(combined, indent=2, sort_keys=True))
    return reports
