"""Thin-lens defocus geometry, aperture masks, and depth-dependent PSF synthesis.

The blur model is geometric: a point at depth ``z`` imaged by a lens focused
at ``focus_distance_m`` spreads over a blur circle whose diameter scales the
aperture shape onto the sensor. Coded apertures therefore stamp a
depth-dependent copy of their transmission pattern onto every defocused
point, which is the depth cue everything downstream decodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "LensConfig",
    "ApertureMask",
    "Psf",
    "PsfBank",
    "blur_circle_size",
    "blur_sensitivity",
    "synthesize_psf",
    "build_psf_bank",
    "spectral_discriminability",
    "lens_from_config",
]


def _freeze(arr: np.ndarray) -> np.ndarray:
    """Return a read-only float64 view-copy of ``arr``."""
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class LensConfig:
    """Thin-lens and sensor geometry.

    ``focus_distance_m`` must exceed ``focal_length_m`` so the lens equation
    has a real image plane behind the lens.
    """

    focal_length_m: float
    f_number: float
    focus_distance_m: float
    pixel_pitch_m: float
    sensor_width_px: int
    sensor_height_px: int

    def __post_init__(self):
        if self.focal_length_m <= 0:
            raise ValueError(f"focal_length_m must be > 0, got {self.focal_length_m}")
        if self.f_number <= 0:
            raise ValueError(f"f_number must be > 0, got {self.f_number}")
        if self.focus_distance_m <= self.focal_length_m:
            raise ValueError(
                f"focus_distance_m ({self.focus_distance_m}) must exceed "
                f"focal_length_m ({self.focal_length_m})"
            )
        if self.pixel_pitch_m <= 0:
            raise ValueError(f"pixel_pitch_m must be > 0, got {self.pixel_pitch_m}")
        if self.sensor_width_px < 1 or self.sensor_height_px < 1:
            raise ValueError(
                f"sensor dimensions must be >= 1, got "
                f"{self.sensor_width_px}x{self.sensor_height_px}"
            )

    def with_focus(self, focus_distance_m: float) -> "LensConfig":
        """Same lens refocused at a new distance."""
        return replace(self, focus_distance_m=focus_distance_m)


@dataclass(frozen=True)
class ApertureMask:
    """Transmission function of the aperture, sampled on a square grid.

    ``grid`` values are in [0, 1] (0 opaque, 1 transparent). The grid side
    corresponds to ``physical_diameter_m``, the circle circumscribing the
    open region of the mask.
    """

    grid: np.ndarray
    physical_diameter_m: float
    name: str = ""

    def __post_init__(self):
        g = np.clip(np.asarray(self.grid, dtype=np.float64), 0.0, 1.0)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError(f"aperture grid must be square 2-D, got shape {g.shape}")
        if not np.any(g > 0):
            raise ValueError("aperture mask has no open (positive transmission) cells")
        if self.physical_diameter_m <= 0:
            raise ValueError(
                f"physical_diameter_m must be > 0, got {self.physical_diameter_m}"
            )
        object.__setattr__(self, "grid", _freeze(g))


@dataclass(frozen=True)
class Psf:
    """Normalized point spread function for a single depth."""

    kernel: np.ndarray
    depth_m: float
    support_px: int = field(init=False)

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ValueError(f"PSF kernel must be square 2-D, got shape {k.shape}")
        if k.shape[0] % 2 != 1:
            raise ValueError(f"PSF support must be odd, got {k.shape[0]}")
        if np.any(k < 0):
            raise ValueError("PSF kernel has negative weights")
        total = float(k.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"PSF kernel must sum to 1 within 1e-9, got {total!r}")
        object.__setattr__(self, "kernel", _freeze(k))
        object.__setattr__(self, "support_px", int(k.shape[0]))


@dataclass(frozen=True)
class PsfBank:
    """PSFs precomputed over a strictly increasing depth grid.

    All depths lie beyond the focus distance: the sensing model assumes
    nothing sits between the camera and the focal plane.
    """

    lens: LensConfig
    aperture: ApertureMask
    depths_m: tuple
    psfs: tuple

    def __post_init__(self):
        depths = tuple(float(d) for d in self.depths_m)
        psfs = tuple(self.psfs)
        if len(depths) != len(psfs):
            raise ValueError("depths_m and psfs must have equal length")
        if any(b <= a for a, b in zip(depths, depths[1:])):
            raise ValueError("bank depths must be strictly increasing")
        if depths and depths[0] <= self.lens.focus_distance_m:
            raise ValueError(
                f"bank depths must all exceed focus distance "
                f"{self.lens.focus_distance_m} m, got min {depths[0]} m"
            )
        for d, p in zip(depths, psfs):
            if p.depth_m != d:
                raise ValueError(f"psf depth {p.depth_m} does not match grid depth {d}")
        object.__setattr__(self, "depths_m", depths)
        object.__setattr__(self, "psfs", psfs)

    @property
    def z_min(self) -> float:
        return self.depths_m[0]

    @property
    def z_max(self) -> float:
        return self.depths_m[-1]

    def nearest_index(self, depth_m: float) -> int:
        """Index of the bank depth closest in inverse depth."""
        inv = 1.0 / np.asarray(self.depths_m)
        return int(np.argmin(np.abs(inv - 1.0 / depth_m)))

    def max_support_px(self) -> int:
        return max(p.support_px for p in self.psfs)


def blur_circle_size(lens: LensConfig, z: float) -> float:
    """Blur circle diameter (meters on the sensor) for a point at depth ``z``.

    Zero exactly at the focus distance, growing on either side of it.
    """
    if z <= 0:
        raise ValueError(f"depth must be > 0, got {z}")
    f = lens.focal_length_m
    zf = lens.focus_distance_m
    if z == zf:
        return 0.0
    return (f * f / lens.f_number) * abs(z - zf) / (z * (zf - f))


def blur_sensitivity(lens: LensConfig, z: float) -> float:
    """Rate of change of blur circle size with depth, beyond the focal plane.

    Strictly positive and falling off as 1/z^2, which is what limits the
    usable sensing range at large depth.
    """
    zf = lens.focus_distance_m
    if z <= zf:
        raise ValueError(f"depth must exceed focus distance {zf} m, got {z}")
    f = lens.focal_length_m
    return (f * f * zf) / (lens.f_number * (zf - f) * (z * z))


def _odd_ceil(x: float) -> int:
    """Smallest odd integer >= x (and >= 1)."""
    n = max(1, math.ceil(x))
    return n if n % 2 == 1 else n + 1


def _box_resample(grid: np.ndarray, scaled_size: float, out_size: int) -> np.ndarray:
    """Area-weighted resampling of a square grid onto ``out_size`` pixels.

    The source square is scaled to a square of side ``scaled_size`` (in
    output pixels, may be fractional) centered in the output window; each
    output pixel integrates the source transmission over its footprint.
    Outside the scaled square the source is treated as opaque.
    """
    n = grid.shape[0]
    if scaled_size <= 0:
        raise ValueError("scaled_size must be positive")
    offset = (out_size - scaled_size) / 2.0
    scale = n / scaled_size  # output px -> source cells

    # Per-axis overlap weights between output pixel intervals and source cells.
    def axis_weights():
        w = np.zeros((out_size, n))
        for i in range(out_size):
            lo = (i - offset) * scale
            hi = (i + 1 - offset) * scale
            j0 = max(0, math.floor(lo))
            j1 = min(n, math.ceil(hi))
            for j in range(j0, j1):
                w[i, j] = max(0.0, min(hi, j + 1) - max(lo, j))
        return w

    w = axis_weights()  # square geometry: same weights on both axes
    return w @ grid @ w.T


def synthesize_psf(lens: LensConfig, aperture: ApertureMask, z: float) -> Psf:
    """Scale the aperture shape to the blur circle at depth ``z``.

    The mask's circumscribing circle is mapped to the blur circle diameter
    in pixels; transmission is resampled area-weighted onto an odd-sized
    kernel and normalized to unit sum. Blur below one pixel collapses to
    the discrete delta kernel.
    """
    if z <= 0:
        raise ValueError(f"depth must be > 0, got {z}")
    blur_px = blur_circle_size(lens, z) / lens.pixel_pitch_m
    if blur_px < 1.0:
        return Psf(kernel=np.array([[1.0]]), depth_m=float(z))
    support = _odd_ceil(blur_px)
    kernel = _box_resample(aperture.grid, blur_px, support)
    kernel = np.maximum(kernel, 0.0)
    total = kernel.sum()
    if total <= 0:
        # Degenerate masks (all open cells fell between samples) collapse to delta.
        kernel = np.zeros((support, support))
        kernel[support // 2, support // 2] = 1.0
        total = 1.0
    return Psf(kernel=kernel / total, depth_m=float(z))


def build_psf_bank(
    lens: LensConfig,
    aperture: ApertureMask,
    z_min: float,
    z_max: float,
    n_depths: int,
) -> PsfBank:
    """PSFs on a grid uniform in inverse depth between ``z_min`` and ``z_max``.

    Blur size varies linearly in 1/z, so inverse-depth spacing yields
    near-uniform blur-size steps across the bank.
    """
    zf = lens.focus_distance_m
    if not (zf < z_min < z_max):
        raise ValueError(
            f"need focus_distance ({zf}) < z_min ({z_min}) < z_max ({z_max})"
        )
    if n_depths < 2:
        raise ValueError(f"n_depths must be >= 2, got {n_depths}")
    inv = np.linspace(1.0 / z_max, 1.0 / z_min, n_depths)
    depths = np.sort(1.0 / inv)
    depths[0], depths[-1] = z_min, z_max  # pin endpoints against fp drift
    psfs = tuple(synthesize_psf(lens, aperture, float(d)) for d in depths)
    return PsfBank(lens=lens, aperture=aperture, depths_m=tuple(depths), psfs=psfs)


def _padded_magnitude_spectrum(kernel: np.ndarray, size: int) -> np.ndarray:
    pad = np.zeros((size, size))
    pad[: kernel.shape[0], : kernel.shape[1]] = kernel
    mag = np.abs(np.fft.fft2(pad))
    norm = np.linalg.norm(mag)
    return mag / norm if norm > 0 else mag


def spectral_discriminability(bank: PsfBank) -> float:
    """Worst-case spectral separation between any two depths in the bank.

    Magnitude spectra (zero-padded to the bank's largest support, unit L2
    norm) are compared pairwise; the minimum L2 distance is returned.
    Apertures whose Fourier zero-crossing patterns move with depth score
    higher, i.e. are easier to decode.
    """
    if len(bank.psfs) < 2:
        raise ValueError("bank must hold at least 2 depths")
    size = bank.max_support_px()
    spectra = [_padded_magnitude_spectrum(p.kernel, size) for p in bank.psfs]
    best = math.inf
    for i in range(len(spectra)):
        for j in range(i + 1, len(spectra)):
            best = min(best, float(np.linalg.norm(spectra[i] - spectra[j])))
    return best


_LENS_KEYS = {
    "focal_length_m": float,
    "f_number": float,
    "focus_distance_m": float,
    "pixel_pitch_m": float,
    "sensor_width_px": int,
    "sensor_height_px": int,
}


def lens_from_config(text: str) -> LensConfig:
    """Parse a ``key=value`` lens description (one pair per line, # comments)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"lens config line {lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _LENS_KEYS:
            raise ValueError(f"lens config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _LENS_KEYS[key](val.strip())
        except ValueError as exc:
            raise ValueError(f"lens config line {lineno}: bad value for {key}: {exc}") from None
    missing = sorted(set(_LENS_KEYS) - set(values))
    if missing:
        raise ValueError(f"lens config missing keys: {', '.join(missing)}")
    return LensConfig(**values)
