"""On-disk formats: binary PGM, EVF1 event frames, 16-bit depth PNGs.

All writers go through :func:`atomic_write_bytes` so a declared output file
either appears complete or not at all.
"""

from __future__ import annotations

import os
import re
import struct

import numpy as np
from PIL import Image

__all__ = [
    "atomic_write_bytes",
    "read_pgm",
    "write_pgm",
    "read_event_frame",
    "write_event_frame",
    "read_depth_png",
    "write_depth_png",
]

EVF_MAGIC = b"EVF1"


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file + rename."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# PGM (P5, 8-bit)
# ---------------------------------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) into a uint8 array of shape (h, w)."""
    with open(path, "rb") as fh:
        data = fh.read()
    # Header: magic, width, height, maxval; '#' comments allowed between tokens.
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.match(rb"\s*(#[^\n]*\n|\S+)", data[pos:])
        if m is None:
            raise ValueError(f"{path}: truncated PGM header")
        pos += m.end()
        tok = m.group(1)
        if not tok.startswith(b"#"):
            tokens.append(tok)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise ValueError(f"{path}: PGM raster truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def write_pgm(path, image: np.ndarray) -> None:
    """Write a uint8 (or [0,1] float, scaled) array as binary PGM."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255)
        arr = arr.astype(np.uint8)
    h, w = arr.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + arr.tobytes())


# ---------------------------------------------------------------------------
# EVF1 event frames
# ---------------------------------------------------------------------------

def write_event_frame(path, counts: np.ndarray) -> None:
    """Serialize per-pixel event counts: EVF1 magic, u32 w/h, f32 row-major."""
    arr = np.ascontiguousarray(counts, dtype="<f4")
    h, w = arr.shape
    atomic_write_bytes(path, EVF_MAGIC + struct.pack("<II", w, h) + arr.tobytes())


def read_event_frame(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != EVF_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}, expected {EVF_MAGIC!r}")
    w, h = struct.unpack_from("<II", data, 4)
    expected = 12 + 4 * w * h
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, got {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w).astype(np.float64)


# ---------------------------------------------------------------------------
# 16-bit depth PNG + scale sidecar
# ---------------------------------------------------------------------------

def _sidecar_path(png_path) -> str:
    return os.fspath(png_path) + ".scale"


def write_depth_png(path, depth_m: np.ndarray, valid=None) -> float:
    """Write depth (meters) as 16-bit PNG with a sidecar scale file.

    Pixel value 0 is reserved for "no data"; valid depths map to
    ``round(depth / scale)`` clipped to [1, 65535]. Returns the scale.
    """
    depth = np.asarray(depth_m, dtype=np.float64)
    if valid is None:
        valid = depth > 0
    vmax = float(depth[valid].max()) if np.any(valid) else 1.0
    scale = vmax / 65535.0 if vmax > 0 else 1.0
    units = np.zeros(depth.shape, dtype=np.uint16)
    scaled = np.clip(np.round(depth[valid] / scale), 1, 65535)
    units[valid] = scaled.astype(np.uint16)
    img = Image.fromarray(units, mode="I;16")
    path = os.fspath(path)
    tmp = path + ".tmp"
    img.save(tmp, format="PNG")
    os.replace(tmp, path)
    atomic_write_text(_sidecar_path(path), f"scale_m_per_unit={scale!r}\n")
    return scale


def read_depth_png(path) -> np.ndarray:
    """Read a 16-bit depth PNG + sidecar; no-data pixels come back as 0."""
    img = Image.open(path)
    units = np.asarray(img, dtype=np.uint16)
    with open(_sidecar_path(path), "r", encoding="utf-8") as fh:
        text = fh.read()
    m = re.search(r"scale_m_per_unit\s*=\s*(\S+)", text)
    if m is None:
        raise ValueError(f"{_sidecar_path(path)}: missing scale_m_per_unit")
    scale = float(m.group(1))
    return units.astype(np.float64) * scale
