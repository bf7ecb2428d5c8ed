"""Raw tensor files, PGM/PPM images, JSON-lines manifests."""

import io

import numpy as np
import pytest

from refseg.fileio import (FileFormatError, read_array, read_jsonl, read_pgm,
                           read_ppm, read_tensor_file, to_gray, write_array,
                           write_jsonl, write_pgm, write_ppm,
                           write_tensor_file)


def test_tensor_file_roundtrip_f32(tmp_path):
    arr = np.random.default_rng(0).standard_normal((3, 5, 7)).astype(np.float32)
    p = tmp_path / "a.rt"
    write_tensor_file(p, arr)
    back = read_tensor_file(p)
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, arr)


def test_tensor_file_roundtrip_f64(tmp_path):
    arr = np.random.default_rng(1).standard_normal((2, 4))
    p = tmp_path / "b.rt"
    write_tensor_file(p, arr)
    back = read_tensor_file(p)
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back, arr)


def test_tensor_file_scalar_and_vector(tmp_path):
    for arr in (np.array(3.5), np.array([1.0, 2.0, 3.0])):
        p = tmp_path / "c.rt"
        write_tensor_file(p, arr)
        np.testing.assert_array_equal(read_tensor_file(p), arr)


def test_tensor_file_bad_magic(tmp_path):
    p = tmp_path / "bad.rt"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(FileFormatError):
        read_tensor_file(p)


def test_tensor_file_truncated_payload(tmp_path):
    arr = np.ones((4, 4), dtype=np.float32)
    p = tmp_path / "t.rt"
    write_tensor_file(p, arr)
    data = p.read_bytes()
    p.write_bytes(data[:-8])
    with pytest.raises(FileFormatError):
        read_tensor_file(p)


def test_array_stream_roundtrip():
    buf = io.BytesIO()
    arrs = [np.float32([[1, 2], [3, 4]]), np.float64([5.0])]
    for a in arrs:
        write_array(buf, a)
    buf.seek(0)
    for a in arrs:
        np.testing.assert_array_equal(read_array(buf), a)


# ---------------------------------------------------------------------------
# PGM / PPM


def test_pgm_roundtrip(tmp_path):
    gray = np.random.default_rng(2).integers(0, 256, (6, 9)).astype(np.uint8)
    p = tmp_path / "g.pgm"
    write_pgm(p, gray)
    np.testing.assert_array_equal(read_pgm(p), gray)


def test_ppm_roundtrip(tmp_path):
    rgb = np.random.default_rng(3).integers(0, 256, (4, 5, 3)).astype(np.uint8)
    p = tmp_path / "c.ppm"
    write_ppm(p, rgb)
    np.testing.assert_array_equal(read_ppm(p), rgb)


def test_pgm_rejects_wrong_shape(tmp_path):
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "x.pgm", np.zeros((3, 4, 5), dtype=np.uint8))


def test_to_gray_scales_range():
    arr = np.array([[0.0, 0.5, 1.0]])
    g = to_gray(arr, lo=0.0, hi=1.0)
    assert g.dtype == np.uint8
    assert g[0, 0] == 0 and g[0, 2] == 255


def test_to_gray_auto_range_constant_input():
    g = to_gray(np.full((2, 2), 7.0))
    assert g.dtype == np.uint8
    assert np.all((g == 0) | (g == 255)) or np.all(g == g[0, 0])


# ---------------------------------------------------------------------------
# JSON lines


def test_jsonl_roundtrip(tmp_path):
    rows = [{"a": 1, "b": "x"}, {"a": 2, "b": "y"}]
    p = tmp_path / "m.jsonl"
    write_jsonl(p, rows)
    assert read_jsonl(p) == rows


def test_jsonl_rejects_bad_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"ok": 1}\nnot json\n', encoding="utf-8")
    with pytest.raises(FileFormatError):
        read_jsonl(p)
