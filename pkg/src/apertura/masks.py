"""Built-in aperture masks and mask file I/O.

Six masks ship as 8-bit PGM files under ``apertura/data/masks`` (0 = opaque,
255 = transparent) with a ``key=value`` sidecar carrying the physical
diameter. ``pinhole``, ``open`` and ``w`` are rasterized geometry; ``levin``,
``zhou1`` and ``zhou2`` are best-effort reconstructions of the coded patterns
from the literature they are named after, shipped as data rather than ground
truth. The square codes are embedded so their circumscribing circle equals
the grid side, keeping the scale convention uniform across masks.
"""

from __future__ import annotations

import math
import os
from importlib import resources

import numpy as np

from .formats import atomic_write_text, read_pgm, write_pgm
from .optics import ApertureMask

__all__ = ["BUILTIN_MASKS", "builtin_mask", "load_mask", "builtin_mask_grid"]

BUILTIN_MASKS = ("pinhole", "open", "zhou1", "zhou2", "levin", "w")

MASK_DIAMETER_M = 0.009
_GRID = 63
_SS = 4  # supersampling factor for rasterized geometry

# Pinhole-to-open diameter ratio: an f/16 pinhole behind an f/1.4 lens.
_PINHOLE_RATIO = 1.4 / 16.0

_LEVIN_CODE = """
1111111111111
1111111111111
1100111100011
1100111100011
1111111111111
1111001111111
1111001111111
0011111111001
0011111111001
1111111001111
1111111001111
1111111111111
1111111111111
"""

_ZHOU1_CODE = """
1100110110011
1011001110100
0011101001111
1110011110101
0101100110011
1100111010110
1011100111100
0110011010011
1110100111011
0011110110100
1101001100111
0111011101101
1001100111001
"""

_ZHOU2_CODE = """
1111000011111
1111000011111
1100000111111
0011111000111
0011111000111
1111110011111
0000111110000
0000111110000
1111100001111
1111100001111
0011111100111
1100011111000
1100011111000
"""


def _parse_code(code: str) -> np.ndarray:
    rows = [r.strip() for r in code.strip().splitlines()]
    return np.array([[1.0 if c == "1" else 0.0 for c in r] for r in rows])


def _coverage(inside, n: int = _GRID, ss: int = _SS) -> np.ndarray:
    """Fraction of each grid cell covered by the region ``inside(x, y)``.

    Coordinates are grid units with cell centers at integer + 0.5.
    """
    sub = (np.arange(ss) + 0.5) / ss
    xs = (np.arange(n)[:, None] + sub[None, :]).ravel()
    xx, yy = np.meshgrid(xs, xs)
    hit = inside(xx, yy).astype(np.float64)
    return hit.reshape(n, ss, n, ss).mean(axis=(1, 3))


def _disk_grid(diameter_ratio: float, n: int = _GRID) -> np.ndarray:
    c = n / 2.0
    r = diameter_ratio * n / 2.0

    def inside(x, y):
        return (x - c) ** 2 + (y - c) ** 2 <= r * r

    return _coverage(inside, n)


def _seg_dist2(x, y, p, q):
    px, py = p
    qx, qy = q
    dx, dy = qx - px, qy - py
    t = np.clip(((x - px) * dx + (y - py) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    return (x - (px + t * dx)) ** 2 + (y - (py + t * dy)) ** 2


def _w_grid(n: int = _GRID) -> np.ndarray:
    c = n / 2.0
    rim = n / 2.0
    pts = [(0.16 * n, 0.26 * n), (0.32 * n, 0.75 * n), (0.50 * n, 0.42 * n),
           (0.68 * n, 0.75 * n), (0.84 * n, 0.26 * n)]
    half_w = 0.07 * n

    def inside(x, y):
        d2 = np.full(x.shape, np.inf)
        for p, q in zip(pts, pts[1:]):
            d2 = np.minimum(d2, _seg_dist2(x, y, p, q))
        in_stroke = d2 <= half_w * half_w
        in_rim = (x - c) ** 2 + (y - c) ** 2 <= rim * rim
        return in_stroke & in_rim

    return _coverage(inside, n)


def _embedded_code(code: np.ndarray) -> np.ndarray:
    """Center a square code in a grid sized so the code's diagonal fits.

    The open region's circumscribing circle then equals the grid side,
    matching the scale convention of the disk masks.
    """
    m = code.shape[0]
    n = math.ceil(m * math.sqrt(2.0))
    if (n - m) % 2 == 1:
        n += 1
    grid = np.zeros((n, n))
    o = (n - m) // 2
    grid[o : o + m, o : o + m] = code
    return grid


def builtin_mask_grid(name: str) -> np.ndarray:
    """Transmission grid for a built-in mask, computed from its definition."""
    if name == "pinhole":
        return _disk_grid(_PINHOLE_RATIO)
    if name == "open":
        return _disk_grid(1.0)
    if name == "w":
        return _w_grid()
    if name == "levin":
        return _embedded_code(_parse_code(_LEVIN_CODE))
    if name == "zhou1":
        return _embedded_code(_parse_code(_ZHOU1_CODE))
    if name == "zhou2":
        return _embedded_code(_parse_code(_ZHOU2_CODE))
    raise ValueError(f"unknown builtin mask {name!r}, expected one of {BUILTIN_MASKS}")


def _data_dir():
    return resources.files("apertura").joinpath("data/masks")


def builtin_mask(name: str) -> ApertureMask:
    """Load a shipped mask by name through the PGM path."""
    if name not in BUILTIN_MASKS:
        raise ValueError(f"unknown builtin mask {name!r}, expected one of {BUILTIN_MASKS}")
    base = _data_dir()
    with resources.as_file(base.joinpath(f"{name}.pgm")) as pgm_path:
        return load_mask(pgm_path)


def load_mask(pgm_path, cfg_path=None, physical_diameter_m=None, name=None) -> ApertureMask:
    """Load a mask from an 8-bit PGM plus its sidecar config.

    The sidecar (default: same stem with ``.cfg``) supplies
    ``physical_diameter_m`` and optionally ``name``; explicit arguments win.
    """
    pgm_path = os.fspath(pgm_path)
    grid = read_pgm(pgm_path).astype(np.float64) / 255.0
    stem = pgm_path[: -len(".pgm")] if pgm_path.endswith(".pgm") else pgm_path
    if cfg_path is None:
        cfg_path = stem + ".cfg"
    side = {}
    if os.path.exists(cfg_path):
        with open(cfg_path, "r", encoding="utf-8") as fh:
            for raw in fh:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, _, val = line.partition("=")
                side[key.strip()] = val.strip()
    if physical_diameter_m is None:
        if "physical_diameter_m" not in side:
            raise ValueError(
                f"{pgm_path}: no physical_diameter_m given and no sidecar at {cfg_path}"
            )
        physical_diameter_m = float(side["physical_diameter_m"])
    if name is None:
        name = side.get("name", os.path.basename(stem))
    return ApertureMask(grid=grid, physical_diameter_m=physical_diameter_m, name=name)


def write_builtin_files(out_dir) -> list:
    """Regenerate the shipped PGM + sidecar files into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name in BUILTIN_MASKS:
        pgm = os.path.join(os.fspath(out_dir), f"{name}.pgm")
        write_pgm(pgm, builtin_mask_grid(name))
        atomic_write_text(
            os.path.join(os.fspath(out_dir), f"{name}.cfg"),
            f"name={name}\nphysical_diameter_m={MASK_DIAMETER_M}\n",
        )
        written.append(pgm)
    return written
