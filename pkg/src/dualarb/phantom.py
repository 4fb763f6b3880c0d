"""Synthetic multi-contrast phantom slices and the on-disk dataset format.

A phantom pair is two images of the same ellipse geometry rendered with two
different per-tissue-class intensity lookups, standing in for two MR
contrasts of the same anatomy. Slices are stored as raw float32 payloads
with a JSON sidecar (the ".mrs" format) so round trips are bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CANVAS_MULTIPLE = 24

CONTRAST_TARGET = "target"
CONTRAST_REFERENCE = "reference"


class SliceFormatError(Exception):
    """Base class for .mrs read/write failures."""


class SidecarError(SliceFormatError):
    """Sidecar JSON missing, unparsable, or lacking required fields."""


class DimensionMismatchError(SliceFormatError):
    """Payload size does not match the dims claimed by the sidecar."""


@dataclass
class SliceImage:
    """A 2D real-valued slice with contrast label and normalization metadata.

    ``pixels`` is float32, row-major. ``norm_max`` records the maximum pixel
    value before per-slice [0, 1] normalization so intensities are
    invertible.
    """

    pixels: np.ndarray
    contrast: str
    subject_id: str
    slice_id: str
    norm_max: float = 1.0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 1:
            raise ValueError(f"pixels must be a non-empty 2D array, got shape {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("pixel values must be finite")
        if self.contrast not in (CONTRAST_TARGET, CONTRAST_REFERENCE):
            raise ValueError(f"unknown contrast label {self.contrast!r}")

    @property
    def dims(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class Ellipse:
    """One ellipse in normalized canvas coordinates ([-1, 1] per axis)."""

    cy: float
    cx: float
    ay: float  # semi-axis along the (rotated) y direction
    ax: float
    theta: float  # rotation, radians

    def contains(self, y: float, x: float) -> bool:
        """Point-in-ellipse test; the per-pixel oracle uses this directly."""
        ct, st = math.cos(self.theta), math.sin(self.theta)
        dy, dx = y - self.cy, x - self.cx
        u = ct * dx + st * dy
        v = -st * dx + ct * dy
        return (u / self.ax) ** 2 + (v / self.ay) ** 2 <= 1.0


@dataclass(frozen=True)
class PhantomSpec:
    seed: int
    canvas: tuple[int, int]
    n_ellipses: int
    intensity_map_target: tuple[float, ...]
    intensity_map_reference: tuple[float, ...]

    def __post_init__(self):
        h, w = self.canvas
        if h <= 0 or w <= 0 or h % CANVAS_MULTIPLE or w % CANVAS_MULTIPLE:
            raise ValueError(
                f"canvas dims must be positive multiples of {CANVAS_MULTIPLE}, got {h}x{w}"
            )
        if self.n_ellipses < 3:
            raise ValueError(f"need at least 3 ellipses, got {self.n_ellipses}")
        for name, m in (("target", self.intensity_map_target),
                        ("reference", self.intensity_map_reference)):
            if len(m) != self.n_ellipses + 1:
                raise ValueError(
                    f"intensity_map_{name} must have {self.n_ellipses + 1} entries "
                    f"(background + one per ellipse), got {len(m)}"
                )
            if any(not (0.0 <= v <= 1.0) for v in m):
                raise ValueError(f"intensity_map_{name} values must lie in [0, 1]")


def random_spec(seed: int, canvas: tuple[int, int] = (96, 96), n_ellipses: int = 6) -> PhantomSpec:
    """Draw per-class intensity maps for both contrasts from the seed."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    tar = (0.0,) + tuple(rng.uniform(0.15, 1.0, n_ellipses).round(4))
    ref = (0.0,) + tuple(rng.uniform(0.15, 1.0, n_ellipses).round(4))
    return PhantomSpec(seed, canvas, n_ellipses, tar, ref)


def sample_ellipses(spec: PhantomSpec) -> list[Ellipse]:
    """Deterministic ellipse layout: one outer hull plus randomized interiors.

    The whole arrangement gets a per-subject rotation and translation so
    subjects are not trivially aligned with the canvas.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0]))
    rot = rng.uniform(-math.pi / 10, math.pi / 10)
    shift_y, shift_x = rng.uniform(-0.06, 0.06, size=2)
    ct, st = math.cos(rot), math.sin(rot)

    def place(cy, cx, ay, ax, theta):
        gy = st * cx + ct * cy + shift_y
        gx = ct * cx - st * cy + shift_x
        return Ellipse(float(gy), float(gx), float(ay), float(ax), float(theta + rot))

    hull_ay = rng.uniform(0.80, 0.90)
    hull_ax = rng.uniform(0.66, 0.78)
    ellipses = [place(0.0, 0.0, hull_ay, hull_ax, 0.0)]
    for _ in range(spec.n_ellipses - 1):
        r = rng.uniform(0.0, 0.5)
        phi = rng.uniform(0.0, 2 * math.pi)
        cy, cx = r * math.sin(phi), r * math.cos(phi)
        ay = rng.uniform(0.07, 0.40)
        ax = rng.uniform(0.07, 0.40)
        theta = rng.uniform(0.0, math.pi)
        ellipses.append(place(cy, cx, ay, ax, theta))
    return ellipses


def pixel_centers(canvas: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Normalized pixel-center coordinates, (i+0.5)/N mapped to [-1, 1]."""
    h, w = canvas
    ys = (np.arange(h) + 0.5) / h * 2.0 - 1.0
    xs = (np.arange(w) + 0.5) / w * 2.0 - 1.0
    return np.meshgrid(ys, xs, indexing="ij")


def tissue_class_map(spec: PhantomSpec) -> np.ndarray:
    """Per-pixel tissue-class index; later ellipses overwrite earlier ones.

    Class 0 is background; ellipse k (1-based) paints class k. Pixels are
    sampled at centers with no supersampling, so edges are hard and exactly
    reproducible by re-evaluating each ellipse inequality.
    """
    yy, xx = pixel_centers(spec.canvas)
    classes = np.zeros(spec.canvas, dtype=np.int32)
    for k, e in enumerate(sample_ellipses(spec), start=1):
        ct, st = math.cos(e.theta), math.sin(e.theta)
        dy, dx = yy - e.cy, xx - e.cx
        u = ct * dx + st * dy
        v = -st * dx + ct * dy
        inside = (u / e.ax) ** 2 + (v / e.ay) ** 2 <= 1.0
        classes[inside] = k
    return classes


def generate_phantom(spec: PhantomSpec) -> tuple[SliceImage, SliceImage]:
    """Render the aligned pair: identical geometry, per-contrast intensities.

    Each slice is normalized by its own maximum; the pre-normalization
    maximum is kept in ``norm_max``.
    """
    classes = tissue_class_map(spec)
    out = []
    for contrast, imap in ((CONTRAST_TARGET, spec.intensity_map_target),
                           (CONTRAST_REFERENCE, spec.intensity_map_reference)):
        img = np.asarray(imap, dtype=np.float64)[classes]
        peak = float(img.max())
        if peak > 0.0:
            img = img / peak
        else:
            peak = 1.0
        out.append(SliceImage(
            pixels=img.astype(np.float32),
            contrast=contrast,
            subject_id=f"s{spec.seed:06d}",
            slice_id="0",
            norm_max=peak,
        ))
    return out[0], out[1]


# --- .mrs slice format: <name>.bin raw float32 LE row-major + <name>.json ---

_SIDE_FIELDS = ("h", "w", "contrast", "subject", "slice", "norm_max")


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    stem = p.parent / (p.name[:-4] if p.name.endswith(".mrs") else p.name)
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def write_slice(img: SliceImage, path) -> None:
    bin_path, json_path = _paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(img.pixels, dtype="<f4")
    bin_path.write_bytes(payload.tobytes())
    sidecar = {
        "h": int(img.pixels.shape[0]),
        "w": int(img.pixels.shape[1]),
        "contrast": img.contrast,
        "subject": img.subject_id,
        "slice": img.slice_id,
        "norm_max": float(img.norm_max),
    }
    json_path.write_text(json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8")


def read_slice(path) -> SliceImage:
    bin_path, json_path = _paths(path)
    try:
        raw = json.loads(json_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SidecarError(f"missing sidecar {json_path}")
    except json.JSONDecodeError as e:
        raise SidecarError(f"corrupt sidecar {json_path}: {e}")
    if not isinstance(raw, dict) or any(k not in raw for k in _SIDE_FIELDS):
        raise SidecarError(f"sidecar {json_path} lacks required fields {_SIDE_FIELDS}")
    h, w = int(raw["h"]), int(raw["w"])
    if h <= 0 or w <= 0:
        raise SidecarError(f"sidecar {json_path} claims non-positive dims {h}x{w}")
    data = np.frombuffer(bin_path.read_bytes(), dtype="<f4")
    if data.size != h * w:
        raise DimensionMismatchError(
            f"{bin_path}: payload holds {data.size} floats but sidecar claims {h}x{w}={h * w}"
        )
    return SliceImage(
        pixels=data.reshape(h, w).copy(),
        contrast=str(raw["contrast"]),
        subject_id=str(raw["subject"]),
        slice_id=str(raw["slice"]),
        norm_max=float(raw["norm_max"]),
    )


# --- dataset manifests -------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    slice_id: str
    target_path: str  # relative to the manifest's directory
    reference_path: str
    h: int
    w: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    split: str
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        if self.split not in ("train", "valid", "test"):
            raise ValueError(f"split must be train/valid/test, got {self.split!r}")

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> tuple[Path, Path]:
        return Path(self.base_dir) / entry.target_path, Path(self.base_dir) / entry.reference_path

    def load_pair(self, entry: ManifestEntry) -> tuple[SliceImage, SliceImage]:
        tar_path, ref_path = self.resolve(entry)
        return read_slice(tar_path), read_slice(ref_path)

    def save(self, path) -> None:
        path = Path(path)
        rows = [
            {
                "subject": e.subject_id,
                "slice": e.slice_id,
                "target": e.target_path,
                "reference": e.reference_path,
                "h": e.h,
                "w": e.w,
            }
            for e in self.entries
        ]
        path.write_text(json.dumps(rows, sort_keys=True, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, split: str) -> "DatasetManifest":
        path = Path(path)
        rows = json.loads(path.read_text(encoding="utf-8"))
        entries = [
            ManifestEntry(r["subject"], r["slice"], r["target"], r["reference"],
                          int(r["h"]), int(r["w"]))
            for r in rows
        ]
        m = cls(entries=entries, split=split, base_dir=path.parent)
        for e in entries:
            for p in m.resolve(e):
                for suffix in (".bin", ".json"):
                    if not p.with_suffix(suffix).exists():
                        raise FileNotFoundError(f"manifest {path}: missing {p}{suffix}")
        return m


def build_splits(
    entries: list[ManifestEntry],
    ratios: tuple[float, float, float],
    seed: int,
) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Split at subject granularity into disjoint train/valid/test manifests.

    Ratios must be positive and sum to 1. Every non-train split receives at
    least one subject, so there must be at least three subjects.
    """
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be positive and sum to 1, got {ratios}")
    subjects = sorted({e.subject_id for e in entries})
    if len(subjects) < 3:
        raise ValueError(f"need at least 3 subjects to build 3 splits, got {len(subjects)}")
    rng = np.random.default_rng(seed)
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    n = len(order)
    n_valid = max(1, round(n * ratios[1]))
    n_test = max(1, round(n * ratios[2]))
    n_train = n - n_valid - n_test
    if n_train < 1:
        raise ValueError(f"ratios {ratios} leave no training subjects for n={n}")
    groups = {
        "train": set(order[:n_train]),
        "valid": set(order[n_train:n_train + n_valid]),
        "test": set(order[n_train + n_valid:]),
    }
    out = []
    for split in ("train", "valid", "test"):
        keep = [e for e in entries if e.subject_id in groups[split]]
        out.append(DatasetManifest(entries=keep, split=split))
    return tuple(out)


def generate_dataset(
    out_dir,
    seed: int,
    n_subjects: int,
    canvas: tuple[int, int] = (96, 96),
    n_ellipses: int = 6,
    slices_per_subject: int = 1,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> dict[str, DatasetManifest]:
    """Write a full phantom dataset: slices plus train/valid/test manifests."""
    out_dir = Path(out_dir)
    slice_dir = out_dir / "slices"
    slice_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for si in range(n_subjects):
        for sl in range(slices_per_subject):
            child_seed = int(seed) * 1000 + si * slices_per_subject + sl
            spec = random_spec(child_seed, canvas=canvas, n_ellipses=n_ellipses)
            tar, ref = generate_phantom(spec)
            subject_id = f"sub{si:03d}"
            tar = replace_ids(tar, subject_id, str(sl))
            ref = replace_ids(ref, subject_id, str(sl))
            tar_rel = f"slices/{subject_id}_{sl}_tar"
            ref_rel = f"slices/{subject_id}_{sl}_ref"
            write_slice(tar, out_dir / tar_rel)
            write_slice(ref, out_dir / ref_rel)
            entries.append(ManifestEntry(subject_id, str(sl), tar_rel, ref_rel,
                                         canvas[0], canvas[1]))
    manifests = {}
    for m in build_splits(entries, ratios, seed):
        m.base_dir = out_dir
        m.save(out_dir / f"{m.split}.json")
        manifests[m.split] = m
    return manifests


def replace_ids(img: SliceImage, subject_id: str, slice_id: str) -> SliceImage:
    return SliceImage(img.pixels, img.contrast, subject_id, slice_id, img.norm_max)


def load_dataset(data_dir) -> dict[str, DatasetManifest]:
    data_dir = Path(data_dir)
    return {
        split: DatasetManifest.load(data_dir / f"{split}.json", split)
        for split in ("train", "valid", "test")
        if (data_dir / f"{split}.json").exists()
    }
