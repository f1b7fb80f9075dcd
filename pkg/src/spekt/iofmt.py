"""Binary file formats and text exports.

All four binary formats share a discipline: 4-byte magic, little-endian
u16 version, format-specific header, payload, trailing CRC32 (zlib) over
every preceding byte including the magic.

========  =======================================================
magic     contents
========  =======================================================
``SPKT``  transmission matrix: X, Y, h, w, dtype, column-major A
``SPKD``  packed image stack: n, h, w, dtype, C-order pixels
``SPKR``  Tikhonov reconstructor cache: pinv, lambda, source hash
``SPKN``  network checkpoint: spec text block plus named tensors
========  =======================================================

Matrix payloads are column-major so a single channel's speckle pattern is
contiguous on disk.  dtype tag: 0 = float32, 1 = float64; float32 values
widen exactly when read into the float64 pipeline.
"""

from __future__ import annotations

import io
import struct
import zlib
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import Spectrum, TransmissionMatrix
from .errors import (
    BadMagicError,
    CrcMismatchError,
    DataError,
    DimensionError,
    FormatVersionError,
)

__all__ = [
    "write_matrix",
    "read_matrix",
    "write_image_stack",
    "read_image_stack",
    "write_pinv_cache",
    "read_pinv_cache",
    "write_pgm",
    "write_spectrum_csv",
    "read_spectrum_csv",
    "write_manifest",
    "read_manifest",
    "spkt_file_size",
]

FORMAT_VERSION = 1

_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}

# Refuse headers whose dimensions cannot describe a real payload.
_MAX_DIM = 2**31 - 1


def _pack_header(magic: bytes, *fields) -> bytes:
    return magic + struct.pack("<H", FORMAT_VERSION) + b"".join(fields)


def _finish(buf: io.BytesIO) -> bytes:
    payload = buf.getvalue()
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def _check_envelope(data: bytes, magic: bytes) -> bytes:
    """Validate magic, version and CRC; return the body between them."""
    if len(data) < 10:
        raise DataError(f"file too short for {magic.decode()} format ({len(data)} bytes)")
    if data[:4] != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {data[:4]!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version > FORMAT_VERSION:
        raise FormatVersionError(f"file version {version} > supported {FORMAT_VERSION}")
    stored = struct.unpack_from("<I", data, len(data) - 4)[0]
    actual = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored != actual:
        raise CrcMismatchError(f"CRC mismatch: stored {stored:#010x}, computed {actual:#010x}")
    return data[6:-4]


def _dtype_tag(dtype) -> int:
    dt = np.dtype(dtype)
    if dt not in _DTYPE_TAGS:
        raise DataError(f"unsupported dtype {dt}, use float32 or float64")
    return _DTYPE_TAGS[dt]


def _read_exact(body: bytes, offset: int, n: int, what: str) -> bytes:
    if offset + n > len(body):
        raise DataError(f"truncated payload while reading {what}")
    return body[offset : offset + n]


def _check_payload_size(n_items: int, itemsize: int, available: int, what: str) -> None:
    expected = n_items * itemsize
    if n_items > _MAX_DIM or expected != available:
        raise DataError(
            f"{what}: header promises {n_items} items ({expected} bytes), payload has {available}"
        )


# ---------------------------------------------------------------------------
# SPKT transmission matrix
# ---------------------------------------------------------------------------

def write_matrix(path, A: TransmissionMatrix, dtype=np.float64) -> None:
    tag = _dtype_tag(dtype)
    h, w = A.roi_shape
    buf = io.BytesIO()
    buf.write(
        _pack_header(
            b"SPKT",
            struct.pack("<IIIIB", A.n_pixels, A.n_channels, h, w, tag),
        )
    )
    buf.write(np.asarray(A.matrix, dtype=dtype).tobytes(order="F"))
    with open(path, "wb") as fh:
        fh.write(_finish(buf))


def read_matrix(path) -> TransmissionMatrix:
    with open(path, "rb") as fh:
        data = fh.read()
    body = _check_envelope(data, b"SPKT")
    X, Y, h, w, tag = struct.unpack_from("<IIIIB", _read_exact(body, 0, 17, "SPKT header"))
    if tag not in _TAG_DTYPES:
        raise DataError(f"unknown dtype tag {tag}")
    if h * w != X or max(X, Y, h, w) > _MAX_DIM:
        raise DataError(f"inconsistent dims X={X} Y={Y} roi=({h},{w})")
    dt = _TAG_DTYPES[tag]
    raw = body[17:]
    _check_payload_size(X * Y, dt.itemsize, len(raw), "SPKT payload")
    mat = np.frombuffer(raw, dtype=dt.newbyteorder("<")).reshape((X, Y), order="F")
    return TransmissionMatrix(mat.astype(np.float64), roi_shape=(h, w))


def spkt_file_size(X: int, Y: int, dtype=np.float32) -> int:
    """Exact on-disk size of an SPKT file: header + payload + CRC."""
    return 4 + 2 + 17 + X * Y * np.dtype(dtype).itemsize + 4


# ---------------------------------------------------------------------------
# SPKD packed image stack
# ---------------------------------------------------------------------------

def write_image_stack(path, images: np.ndarray) -> None:
    arr = np.ascontiguousarray(images)
    if arr.ndim != 3:
        raise DimensionError(f"image stack must be (n, h, w), got {arr.shape}")
    tag = _dtype_tag(arr.dtype)
    n, h, w = arr.shape
    buf = io.BytesIO()
    buf.write(_pack_header(b"SPKD", struct.pack("<IIIB", n, h, w, tag)))
    buf.write(arr.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(_finish(buf))


def read_image_stack(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    body = _check_envelope(data, b"SPKD")
    n, h, w, tag = struct.unpack_from("<IIIB", _read_exact(body, 0, 13, "SPKD header"))
    if tag not in _TAG_DTYPES:
        raise DataError(f"unknown dtype tag {tag}")
    dt = _TAG_DTYPES[tag]
    raw = body[13:]
    _check_payload_size(n * h * w, dt.itemsize, len(raw), "SPKD payload")
    return np.frombuffer(raw, dtype=dt.newbyteorder("<")).reshape(n, h, w).copy()


# ---------------------------------------------------------------------------
# SPKR reconstructor cache
# ---------------------------------------------------------------------------

def write_pinv_cache(path, pinv: np.ndarray, lam: float, source_hash: str) -> None:
    arr = np.asarray(pinv, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"pinv must be 2-D, got {arr.shape}")
    Y, X = arr.shape
    hash_bytes = source_hash.encode("ascii")[:16].ljust(16, b"\0")
    buf = io.BytesIO()
    buf.write(_pack_header(b"SPKR", struct.pack("<IId", Y, X, float(lam)) + hash_bytes))
    buf.write(arr.tobytes(order="F"))
    with open(path, "wb") as fh:
        fh.write(_finish(buf))


def read_pinv_cache(path) -> Tuple[np.ndarray, float, str]:
    with open(path, "rb") as fh:
        data = fh.read()
    body = _check_envelope(data, b"SPKR")
    Y, X, lam = struct.unpack_from("<IId", _read_exact(body, 0, 16, "SPKR header"))
    source_hash = _read_exact(body, 16, 16, "SPKR hash").rstrip(b"\0").decode("ascii")
    raw = body[32:]
    _check_payload_size(Y * X, 8, len(raw), "SPKR payload")
    pinv = np.frombuffer(raw, dtype="<f8").reshape((Y, X), order="F").copy()
    return pinv, lam, source_hash


# ---------------------------------------------------------------------------
# text exports
# ---------------------------------------------------------------------------

def write_pgm(path, image) -> None:
    """Binary 16-bit PGM (P5), intensities scaled so the peak maps to 65535."""
    pixels = np.asarray(getattr(image, "pixels", image), dtype=np.float64)
    if pixels.ndim != 2:
        raise DimensionError(f"PGM export needs a 2-D image, got {pixels.shape}")
    peak = pixels.max()
    scaled = np.zeros_like(pixels) if peak <= 0 else pixels * (65535.0 / peak)
    data = np.round(scaled).astype(">u2")
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def write_spectrum_csv(path, spectrum, labels: Optional[List[str]] = None) -> None:
    values = np.asarray(getattr(spectrum, "values", spectrum), dtype=np.float64)
    if labels is None:
        labels = [str(j) for j in range(values.shape[0])]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index,wavelength_label,intensity\n")
        for j, (label, v) in enumerate(zip(labels, values)):
            fh.write(f"{j},{label},{float(v)!r}\n")


def read_spectrum_csv(path) -> Spectrum:
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "index,wavelength_label,intensity":
            raise DataError(f"unexpected spectrum CSV header: {header!r}")
        for line in fh:
            line = line.strip()
            if line:
                values.append(float(line.split(",")[2]))
    return Spectrum(np.asarray(values))


def write_manifest(path, entries: Dict[str, object]) -> None:
    """Plain-text key=value manifest, one entry per line, keys sorted."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(entries):
            value = entries[key]
            fh.write(f"{key}={value}\n")


def read_manifest(path) -> Dict[str, str]:
    entries: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"malformed manifest line: {line!r}")
            key, value = line.split("=", 1)
            entries[key] = value
    return entries


# ---------------------------------------------------------------------------
# SPKN checkpoint container (spec text block + named tensors)
# ---------------------------------------------------------------------------

def write_tensor_container(path, spec_text: str, tensors: List[Tuple[str, np.ndarray]]) -> None:
    buf = io.BytesIO()
    buf.write(_pack_header(b"SPKN", b""))
    spec_bytes = spec_text.encode("utf-8")
    buf.write(struct.pack("<I", len(spec_bytes)))
    buf.write(spec_bytes)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr)
        tag = _dtype_tag(arr.dtype)
        name_bytes = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_bytes)))
        buf.write(name_bytes)
        buf.write(struct.pack("<BB", tag, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        buf.write(arr.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(_finish(buf))


def read_tensor_container(path) -> Tuple[str, List[Tuple[str, np.ndarray]]]:
    with open(path, "rb") as fh:
        data = fh.read()
    body = _check_envelope(data, b"SPKN")
    offset = 0
    (spec_len,) = struct.unpack_from("<I", _read_exact(body, offset, 4, "spec length"))
    offset += 4
    spec_text = _read_exact(body, offset, spec_len, "spec block").decode("utf-8")
    offset += spec_len
    (n_tensors,) = struct.unpack_from("<I", _read_exact(body, offset, 4, "tensor count"))
    offset += 4
    tensors: List[Tuple[str, np.ndarray]] = []
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", _read_exact(body, offset, 2, "tensor name length"))
        offset += 2
        name = _read_exact(body, offset, name_len, "tensor name").decode("utf-8")
        offset += name_len
        tag, ndim = struct.unpack_from("<BB", _read_exact(body, offset, 2, "tensor header"))
        offset += 2
        if tag not in _TAG_DTYPES:
            raise DataError(f"unknown dtype tag {tag} for tensor {name!r}")
        shape = struct.unpack_from(f"<{ndim}I", _read_exact(body, offset, 4 * ndim, "tensor dims"))
        offset += 4 * ndim
        dt = _TAG_DTYPES[tag]
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        if count > _MAX_DIM:
            raise DataError(f"tensor {name!r} dimension overflow: {shape}")
        raw = _read_exact(body, offset, count * dt.itemsize, f"tensor {name!r} payload")
        offset += count * dt.itemsize
        arr = np.frombuffer(raw, dtype=dt.newbyteorder("<")).reshape(shape).copy()
        tensors.append((name, arr))
    if offset != len(body):
        raise DataError(f"{len(body) - offset} trailing bytes after last tensor")
    return spec_text, tensors
