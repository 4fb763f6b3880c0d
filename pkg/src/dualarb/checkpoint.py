"""Zip-based checkpoint archives.

Layout: ``meta.json`` (format tag, config, free-form extra state),
``arrays.json`` (name -> {shape, dtype}), and one raw little-endian
C-order binary per array under ``arrays/``. Raw bytes make round trips
bit-exact, which resume-determinism tests rely on.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

FORMAT_TAG = "dual-arbitrary-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_archive(path, config: dict, arrays: dict[str, np.ndarray],
                 extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "config": config,
        "extra": extra or {},
    }
    index = {}
    blobs = {}
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        dtype = a.dtype.newbyteorder("<")
        index[name] = {"shape": list(a.shape), "dtype": dtype.str}
        blobs[name] = a.astype(dtype, copy=False).tobytes()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("meta.json", json.dumps(meta, sort_keys=True))
        zf.writestr("arrays.json", json.dumps(index, sort_keys=True))
        for name in sorted(blobs):
            zf.writestr(f"arrays/{name}.bin", blobs[name])
    tmp.replace(path)


def load_archive(path) -> tuple[dict, dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such checkpoint: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            index = json.loads(zf.read("arrays.json"))
            raw = {name: zf.read(f"arrays/{name}.bin") for name in index}
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if meta.get("format") != FORMAT_TAG:
        raise CheckpointError(f"unrecognized archive format in {path}")
    if meta.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint version {meta.get('version')} unsupported "
            f"(expected {FORMAT_VERSION})"
        )
    arrays = {}
    for name, spec in index.items():
        shape = tuple(spec["shape"])
        dtype = np.dtype(spec["dtype"])
        n_expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if len(raw[name]) != n_expected:
            raise CheckpointError(
                f"array {name} truncated: {len(raw[name])} bytes, expected {n_expected}"
            )
        arrays[name] = np.frombuffer(raw[name], dtype=dtype).reshape(shape).copy()
    return meta["config"], arrays, meta.get("extra", {})
