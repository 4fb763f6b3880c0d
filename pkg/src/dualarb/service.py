"""HTTP service for interactive arbitrary-scale reconstruction.

Each (slice, scale, reference mode) is fused and decoded once over the full
output grid and cached; ROI requests crop that array. Because decoding is
per-pixel this equals a window-only decode, and it makes cached and uncached
paths bit-identical while disjoint ROIs tile into exactly the full-slice
reconstruction.

Slider scales are quantized to 1/96 steps so nearby requests share cache
entries. The model snapshot (weights + data index) is swapped atomically on
reload; no request ever sees a half-loaded model.
"""

from __future__ import annotations

import base64
import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from . import kspace, phantom
from .evaluate import error_map, render_gray_png
from .geometry import ScaleTask, round_half_up
from .losses import psnr as psnr_metric
from .losses import ssim as ssim_metric
from .losses import SSIM_WINDOW

SCALE_QUANTUM = 96  # slider scales snap to multiples of 1/96


class RoiRequest(BaseModel):
    volume_id: str
    slice_id: str
    roi: tuple[int, int, int, int]          # x0, y0, w, h in target-LR pixels
    scale: float
    ref_mode: str = "HR"
    compare: bool = False
    return_raw: bool = False
    token: int | None = None


@dataclass
class CachedSlice:
    task: ScaleTask
    lr_dims: tuple
    sr_full: np.ndarray           # float32 full-grid reconstruction
    nbytes: int


class FeatureCache:
    """Bounded LRU keyed by (volume, slice, scale steps, ref mode, ckpt)."""

    def __init__(self, capacity: int = 4, max_entry_bytes: int = 128 << 20):
        self.capacity = capacity
        self.max_entry_bytes = max_entry_bytes
        self._entries: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.skipped = 0

    def get(self, key):
        with self._lock:
            entry = self._entries.get(key)
            if entry is None:
                self.misses += 1
                return None
            self._entries.move_to_end(key)
            self.hits += 1
            return entry

    def put(self, key, entry: CachedSlice):
        if entry.nbytes > self.max_entry_bytes:
            with self._lock:
                self.skipped += 1
            return
        with self._lock:
            self._entries[key] = entry
            self._entries.move_to_end(key)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)

    def stats(self) -> dict:
        with self._lock:
            return {"size": len(self._entries), "capacity": self.capacity,
                    "hits": self.hits, "misses": self.misses,
                    "skipped_too_large": self.skipped}


@dataclass
class Snapshot:
    model: object | None
    checkpoint_hash: str | None
    slices: dict                      # (volume_id, slice_id) -> (tar, ref) float32
    catalog: list
    cache: FeatureCache = field(default_factory=FeatureCache)


def _hash_file(path) -> str:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return digest[:16]


def _load_snapshot(checkpoint_path, data_dir, split, cache_capacity,
                   max_entry_bytes) -> Snapshot:
    from . import trainer

    slices, by_volume = {}, {}
    if data_dir is not None:
        manifest = phantom.load_dataset(data_dir).get(split)
        if manifest is not None:
            for entry in manifest.entries:
                tar, ref = manifest.load_pair(entry)
                slices[(entry.subject_id, entry.slice_id)] = (tar.pixels, ref.pixels)
                by_volume.setdefault(entry.subject_id, []).append(
                    {"slice_id": entry.slice_id, "h": entry.h, "w": entry.w,
                     "contrasts": ["target", "reference"]})
    catalog = [{"volume_id": v, "slices": rows}
               for v, rows in sorted(by_volume.items())]
    model, ckpt_hash = None, None
    if checkpoint_path is not None:
        state = trainer.load_checkpoint(checkpoint_path)
        model = state.model
        model.eval()
        ckpt_hash = _hash_file(checkpoint_path)
    return Snapshot(model=model, checkpoint_hash=ckpt_hash, slices=slices,
                    catalog=catalog,
                    cache=FeatureCache(cache_capacity, max_entry_bytes))


def quantize_scale(s: float) -> float:
    return round(s * SCALE_QUANTUM) / SCALE_QUANTUM


def _reconstruct_full(model, tar_hr: np.ndarray, ref_hr: np.ndarray,
                      s: float, ref_mode: str) -> CachedSlice:
    """Fuse and decode the whole slice once; ROI requests crop the result.

    Per-pixel decoding makes crops of this array bit-identical to what a
    window-only decode would ideally produce, without depending on how
    convolution kernels tile differently sized tensors.
    """
    lr = kspace.degrade_array(tar_hr, s).astype(np.float32)
    ref = ref_hr if ref_mode == "HR" else kspace.degrade_array(ref_hr, s).astype(np.float32)
    try:
        task = ScaleTask.from_dims(tar_hr.shape, lr.shape, ref.shape, ref_mode)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    with torch.no_grad():
        sr = model(lr, np.asarray(ref, dtype=np.float32), task)
    sr_full = sr[0, 0].numpy().astype(np.float32, copy=False)
    return CachedSlice(task=task, lr_dims=lr.shape, sr_full=sr_full,
                       nbytes=sr_full.nbytes)


def create_app(checkpoint_path=None, data_dir=None, split: str = "test",
               cache_capacity: int = 4, max_entry_bytes: int = 128 << 20,
               max_scale: float = 8.0, ui_dir=None) -> FastAPI:
    app = FastAPI(title="dual-arbitrary slice service")
    app.state.sources = {"checkpoint": checkpoint_path, "data_dir": data_dir,
                         "split": split, "cache_capacity": cache_capacity,
                         "max_entry_bytes": max_entry_bytes}
    app.state.max_scale = max_scale
    app.state.snapshot = _load_snapshot(checkpoint_path, data_dir, split,
                                        cache_capacity, max_entry_bytes)

    def snap() -> Snapshot:
        return app.state.snapshot

    @app.get("/api/health")
    def health():
        s = snap()
        return {"status": "ok", "model_loaded": s.model is not None,
                "checkpoint_hash": s.checkpoint_hash,
                "cache": s.cache.stats(), "n_volumes": len(s.catalog),
                "max_scale": app.state.max_scale}

    @app.get("/api/volumes")
    def volumes():
        return {"volumes": snap().catalog}

    def _slice_or_404(s: Snapshot, volume_id: str, slice_id: str):
        pair = s.slices.get((volume_id, slice_id))
        if pair is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown slice {volume_id}/{slice_id}")
        return pair

    @app.get("/api/volumes/{volume_id}/slices/{slice_id}")
    def get_slice(volume_id: str, slice_id: str,
                  view: str = Query("hr", pattern="^(lr|hr|ref)$"),
                  scale: float = 2.0):
        tar, ref = _slice_or_404(snap(), volume_id, slice_id)
        if view == "hr":
            img = tar
        elif view == "ref":
            img = ref
        else:
            s = quantize_scale(scale)
            if not 1.0 <= s <= app.state.max_scale:
                raise HTTPException(status_code=422, detail=f"scale {scale} out of bounds")
            img = kspace.degrade_array(tar, s)
        return Response(content=render_gray_png(img), media_type="image/png")

    @app.post("/api/reconstruct")
    def reconstruct(req: RoiRequest):
        s = snap()
        if s.model is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        if req.ref_mode not in ("LR", "HR"):
            raise HTTPException(status_code=422,
                                detail=f"ref_mode must be LR or HR, got {req.ref_mode!r}")
        tar_hr, ref_hr = _slice_or_404(s, req.volume_id, req.slice_id)
        scale = quantize_scale(req.scale)
        if not 1.0 <= scale <= app.state.max_scale:
            raise HTTPException(status_code=422,
                                detail=f"scale {req.scale} outside [1, {app.state.max_scale}]")
        lr_dims = kspace.lr_dims_for_scale(tar_hr.shape, scale)
        x0, y0, w, h = req.roi
        if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > lr_dims[1] or y0 + h > lr_dims[0]:
            raise HTTPException(status_code=422,
                                detail=f"roi {req.roi} outside LR grid {lr_dims}")

        key = (req.volume_id, req.slice_id, round(scale * SCALE_QUANTUM),
               req.ref_mode, s.checkpoint_hash)
        entry = s.cache.get(key)
        served_from = "cache"
        if entry is None:
            served_from = "fresh"
            entry = _reconstruct_full(s.model, tar_hr, ref_hr, scale, req.ref_mode)
            s.cache.put(key, entry)

        s_y = tar_hr.shape[0] / lr_dims[0]
        s_x = tar_hr.shape[1] / lr_dims[1]
        win = (round_half_up(y0 * s_y), round_half_up((y0 + h) * s_y),
               round_half_up(x0 * s_x), round_half_up((x0 + w) * s_x))
        sr = entry.sr_full[win[0]:win[1], win[2]:win[3]]

        payload = {
            "h": int(sr.shape[0]), "w": int(sr.shape[1]),
            "scale": scale, "s_exact": entry.task.s_tar,
            "png": base64.b64encode(render_gray_png(sr)).decode("ascii"),
            "served_from": served_from,
            "token": req.token,
        }
        if req.return_raw:
            payload["raw"] = base64.b64encode(
                np.ascontiguousarray(sr.astype("<f4")).tobytes()).decode("ascii")
        if req.compare:
            hr_crop = np.asarray(tar_hr[win[0]:win[1], win[2]:win[3]], dtype=np.float64)
            sr64 = sr.astype(np.float64)
            payload["psnr"] = psnr_metric(sr64, hr_crop)
            if min(hr_crop.shape) >= SSIM_WINDOW:
                payload["ssim"] = ssim_metric(sr64, hr_crop)
            payload["error_png"] = base64.b64encode(
                error_map(sr64, hr_crop).png_bytes).decode("ascii")
            payload["error_vmax"] = float(np.abs(sr64 - hr_crop).max())
        if payload.get("psnr") == float("inf"):
            payload["psnr"] = "inf"  # JSON has no infinity literal
        return JSONResponse(payload)

    @app.post("/api/reload")
    def reload():
        src = app.state.sources
        app.state.snapshot = _load_snapshot(
            src["checkpoint"], src["data_dir"], src["split"],
            src["cache_capacity"], src["max_entry_bytes"])
        return {"status": "reloaded",
                "checkpoint_hash": app.state.snapshot.checkpoint_hash}

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
