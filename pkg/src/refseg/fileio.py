"""On-disk formats: raw tensor files, PGM/PPM images, JSON-lines logs.

Tensor file layout (all integers little-endian):

    8-byte magic | u32 rank | rank x u32 dims | u32 dtype flag | payload

dtype flag 0 = float32, 1 = float64; payload is row-major little-endian.
The same record layout (minus magic) is reused inside checkpoint files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO, Iterable, List, Optional, Union

import numpy as np

TENSOR_MAGIC = b"RSEGTNSR"
MAX_RANK = 8
_FLAG_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_TO_FLAG = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

PathLike = Union[str, Path]


class FileFormatError(RuntimeError):
    """Raised for corrupt, truncated, or mismatched on-disk data."""


def _read_exact(fh: BinaryIO, n: int, what: str, where: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FileFormatError(f"{where}: truncated while reading {what} "
                              f"(wanted {n} bytes, got {len(buf)})")
    return buf


def write_array(fh: BinaryIO, arr: np.ndarray) -> None:
    """One headerless tensor record: rank, dims, dtype flag, payload."""
    flag = _DTYPE_TO_FLAG.get(arr.dtype)
    if flag is None:
        raise TypeError(f"unsupported dtype {arr.dtype}, expected float32/float64")
    if arr.ndim > MAX_RANK:
        raise ValueError(f"rank {arr.ndim} exceeds maximum {MAX_RANK}")
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(struct.pack("<I", flag))
    fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_array(fh: BinaryIO, where: str = "tensor record") -> np.ndarray:
    rank = struct.unpack("<I", _read_exact(fh, 4, "rank", where))[0]
    if rank > MAX_RANK:
        raise FileFormatError(f"{where}: rank {rank} exceeds maximum {MAX_RANK}")
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims", where))
    flag = struct.unpack("<I", _read_exact(fh, 4, "dtype flag", where))[0]
    dtype = _FLAG_TO_DTYPE.get(flag)
    if dtype is None:
        raise FileFormatError(f"{where}: unknown dtype flag {flag}")
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = _read_exact(fh, count * dtype.itemsize, "payload", where)
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def write_tensor_file(path: PathLike, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        write_array(fh, arr)


def read_tensor_file(path: PathLike) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(TENSOR_MAGIC), "magic", str(path))
        if magic != TENSOR_MAGIC:
            raise FileFormatError(f"{path}: bad magic {magic!r}")
        arr = read_array(fh, where=str(path))
        if fh.read(1):
            raise FileFormatError(f"{path}: trailing bytes after payload")
    return arr


# ---------------------------------------------------------------------------
# netpbm images (visualization dumps)


def to_gray(arr: np.ndarray, lo: Optional[float] = None,
            hi: Optional[float] = None) -> np.ndarray:
    """Scale a float array into u8 [0,255]; degenerate range maps to 0."""
    a = np.asarray(arr, dtype=np.float64)
    lo = float(a.min()) if lo is None else lo
    hi = float(a.max()) if hi is None else hi
    if hi <= lo:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.clip((a - lo) / (hi - lo) * 255.0, 0, 255).astype(np.uint8)


def write_pgm(path: PathLike, gray: np.ndarray) -> None:
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ValueError(f"write_pgm: expected u8 [H,W], got {gray.dtype} {gray.shape}")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def write_ppm(path: PathLike, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError(f"write_ppm: expected u8 [H,W,3], got {rgb.dtype} {rgb.shape}")
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def _read_pnm_tokens(fh: BinaryIO, n: int, where: str) -> List[int]:
    tokens: List[int] = []
    while len(tokens) < n:
        line = fh.readline()
        if not line:
            raise FileFormatError(f"{where}: truncated header")
        text = line.split(b"#", 1)[0]
        tokens.extend(int(t) for t in text.split())
    return tokens


def read_pgm(path: PathLike) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P5":
            raise FileFormatError(f"{path}: not a binary PGM")
        w, h, maxval = _read_pnm_tokens(fh, 3, str(path))
        if maxval != 255:
            raise FileFormatError(f"{path}: unsupported maxval {maxval}")
        data = _read_exact(fh, w * h, "pixels", str(path))
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def read_ppm(path: PathLike) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P6":
            raise FileFormatError(f"{path}: not a binary PPM")
        w, h, maxval = _read_pnm_tokens(fh, 3, str(path))
        if maxval != 255:
            raise FileFormatError(f"{path}: unsupported maxval {maxval}")
        data = _read_exact(fh, w * h * 3, "pixels", str(path))
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


# ---------------------------------------------------------------------------
# JSON lines


def append_jsonl(path: PathLike, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def write_jsonl(path: PathLike, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path: PathLike) -> List[dict]:
    path = Path(path)
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise FileFormatError(f"{path}:{ln}: bad JSON line: {e}") from None
    return records
