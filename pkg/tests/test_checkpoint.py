"""Checkpoint archive format: bit-exact round trips and corruption handling."""

import json
import zipfile

import numpy as np
import pytest

from dualarb import checkpoint as ckpt


def sample_arrays(rng):
    return {
        "enc.w": rng.random((3, 4, 5), dtype=np.float32),
        "enc.b": rng.random(7, dtype=np.float32),
        "adam.exp_avg.enc.w": rng.standard_normal((3, 4, 5)).astype(np.float32),
        "stats": rng.standard_normal((2, 2)),  # float64 stays float64
    }


class TestRoundTrip:
    def test_arrays_bit_exact(self, tmp_path, rng):
        arrays = sample_arrays(rng)
        path = tmp_path / "c.zip"
        ckpt.save_archive(path, {"depth": 2}, arrays, {"epoch": 3})
        config, back, extra = ckpt.load_archive(path)
        assert config == {"depth": 2}
        assert extra == {"epoch": 3}
        assert set(back) == set(arrays)
        for k in arrays:
            assert back[k].dtype == arrays[k].dtype
            assert np.array_equal(back[k], arrays[k])

    def test_extra_defaults_empty(self, tmp_path, rng):
        path = tmp_path / "c.zip"
        ckpt.save_archive(path, {}, sample_arrays(rng))
        _, _, extra = ckpt.load_archive(path)
        assert extra == {}

    def test_nested_extra_json(self, tmp_path):
        extra = {"rng_state": {"bit_generator": "PCG64",
                               "state": {"state": 123, "inc": 5}},
                 "steps": {"a": 1}}
        path = tmp_path / "c.zip"
        ckpt.save_archive(path, {}, {"x": np.zeros(1)}, extra)
        assert ckpt.load_archive(path)[2] == extra

    def test_no_stale_tmp_left(self, tmp_path, rng):
        path = tmp_path / "c.zip"
        ckpt.save_archive(path, {}, sample_arrays(rng))
        assert not list(tmp_path.glob("*.tmp"))


class TestFailures:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ckpt.CheckpointError, match="no such"):
            ckpt.load_archive(tmp_path / "nope.zip")

    def test_not_a_zip(self, tmp_path):
        p = tmp_path / "bad.zip"
        p.write_bytes(b"this is not a zip archive")
        with pytest.raises(ckpt.CheckpointError, match="unreadable"):
            ckpt.load_archive(p)

    def test_wrong_format_tag(self, tmp_path):
        p = tmp_path / "c.zip"
        with zipfile.ZipFile(p, "w") as zf:
            zf.writestr("meta.json", json.dumps({"format": "other", "version": 1}))
            zf.writestr("arrays.json", "{}")
        with pytest.raises(ckpt.CheckpointError, match="format"):
            ckpt.load_archive(p)

    def test_unsupported_version(self, tmp_path, rng):
        p = tmp_path / "c.zip"
        ckpt.save_archive(p, {}, sample_arrays(rng))
        # rewrite meta with a bumped version
        with zipfile.ZipFile(p) as zf:
            meta = json.loads(zf.read("meta.json"))
            rest = {n: zf.read(n) for n in zf.namelist() if n != "meta.json"}
        meta["version"] = 99
        with zipfile.ZipFile(p, "w") as zf:
            zf.writestr("meta.json", json.dumps(meta))
            for n, b in rest.items():
                zf.writestr(n, b)
        with pytest.raises(ckpt.CheckpointError, match="version"):
            ckpt.load_archive(p)

    def test_truncated_payload(self, tmp_path, rng):
        p = tmp_path / "c.zip"
        ckpt.save_archive(p, {}, sample_arrays(rng))
        with zipfile.ZipFile(p) as zf:
            entries = {n: zf.read(n) for n in zf.namelist()}
        entries["arrays/enc.w.bin"] = entries["arrays/enc.w.bin"][:-4]
        with zipfile.ZipFile(p, "w") as zf:
            for n, b in entries.items():
                zf.writestr(n, b)
        with pytest.raises(ckpt.CheckpointError, match="truncated"):
            ckpt.load_archive(p)

    def test_missing_array_blob(self, tmp_path, rng):
        p = tmp_path / "c.zip"
        ckpt.save_archive(p, {}, sample_arrays(rng))
        with zipfile.ZipFile(p) as zf:
            entries = {n: zf.read(n) for n in zf.namelist()}
        entries.pop("arrays/enc.b.bin")
        with zipfile.ZipFile(p, "w") as zf:
            for n, b in entries.items():
                zf.writestr(n, b)
        with pytest.raises(ckpt.CheckpointError, match="unreadable"):
            ckpt.load_archive(p)
