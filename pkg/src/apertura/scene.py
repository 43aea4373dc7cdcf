"""Dark scenes lit by a projected dot pattern, rendered to latent images.

The projector is co-located with the camera (zero baseline), so a dot's
image position carries no parallax information; depth enters the pipeline
only through defocus blur. Scenes are stacks of fronto-parallel rectangular
layers over a background plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .optics import LensConfig

__all__ = [
    "DotPattern",
    "Layer",
    "Scene",
    "LatentImage",
    "render_latent",
    "scene_from_config",
    "pattern_from_config",
]

DEFAULT_DOT_RADIUS_PX = 1.5
DEFAULT_DOT_COUNT = 400


@dataclass(frozen=True)
class DotPattern:
    """Projected dots in normalized [0,1]^2 projector coordinates."""

    dots: tuple  # of (x_norm, y_norm, intensity)
    dot_radius_px: float = DEFAULT_DOT_RADIUS_PX
    layout: str = "custom"

    def __post_init__(self):
        dots = tuple((float(x), float(y), float(i)) for x, y, i in self.dots)
        for x, y, i in dots:
            if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                raise ValueError(f"dot coordinate ({x}, {y}) outside [0,1]^2")
            if not (0.0 < i <= 1.0):
                raise ValueError(f"dot intensity {i} outside (0,1]")
        if self.dot_radius_px <= 0:
            raise ValueError(f"dot_radius_px must be > 0, got {self.dot_radius_px}")
        object.__setattr__(self, "dots", dots)

    @staticmethod
    def grid(nx: int, ny: int, intensity: float = 0.9,
             dot_radius_px: float = DEFAULT_DOT_RADIUS_PX) -> "DotPattern":
        """Regular nx-by-ny grid with half-cell margins."""
        dots = [((i + 0.5) / nx, (j + 0.5) / ny, intensity)
                for j in range(ny) for i in range(nx)]
        return DotPattern(dots=tuple(dots), dot_radius_px=dot_radius_px,
                          layout=f"grid({nx}x{ny})")

    @staticmethod
    def pseudorandom(n: int, seed: int, intensity: float = 0.9,
                     dot_radius_px: float = DEFAULT_DOT_RADIUS_PX,
                     min_sep_norm: float = 0.0,
                     snap_to=None) -> "DotPattern":
        """Seeded random layout, optionally with a minimum dot separation.

        Separation is enforced by dart throwing so sparse patterns stay
        sparse enough for per-dot blur signatures to remain isolated.
        ``snap_to=(width_px, height_px)`` quantizes positions to exact pixel
        centers of that sensor.
        """
        rng = np.random.default_rng(seed)
        dots = []
        placed = np.empty((0, 2))
        attempts = 0
        max_attempts = max(1000, 4000 * n)
        while len(dots) < n and attempts < max_attempts:
            attempts += 1
            x, y = rng.random(2)
            if snap_to is not None:
                w, h = snap_to
                x = round(x * (w - 1)) / (w - 1)
                y = round(y * (h - 1)) / (h - 1)
            if min_sep_norm > 0 and len(dots):
                d2 = np.sum((placed - (x, y)) ** 2, axis=1)
                if d2.min() < min_sep_norm * min_sep_norm:
                    continue
            dots.append((x, y, intensity))
            placed = np.vstack([placed, (x, y)])
        if len(dots) < n:
            raise ValueError(
                f"could not place {n} dots with min separation {min_sep_norm}; "
                f"managed {len(dots)}"
            )
        return DotPattern(dots=tuple(dots), dot_radius_px=dot_radius_px,
                          layout=f"pseudorandom(n={n},seed={seed})")

    @staticmethod
    def pixel_grid(nx: int, ny: int, width_px: int, height_px: int,
                   intensity: float = 0.9,
                   dot_radius_px: float = DEFAULT_DOT_RADIUS_PX,
                   margin_px: int = 30,
                   offset_px=(0, 0)) -> "DotPattern":
        """Evenly spaced dots snapped to exact integer pixel positions."""
        xs = np.round(np.linspace(margin_px, width_px - 1 - margin_px, nx)) + offset_px[0]
        ys = np.round(np.linspace(margin_px, height_px - 1 - margin_px, ny)) + offset_px[1]
        dots = [(x / (width_px - 1), y / (height_px - 1), intensity)
                for y in ys for x in xs]
        return DotPattern(dots=tuple(dots), dot_radius_px=dot_radius_px,
                          layout=f"pixel_grid({nx}x{ny})")


@dataclass(frozen=True)
class Layer:
    """Fronto-parallel rectangle [x0,x1) x [y0,y1) in pixel coordinates."""

    depth_m: float
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.depth_m <= 0:
            raise ValueError(f"layer depth must be > 0, got {self.depth_m}")
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ValueError(f"layer region empty: {self}")


@dataclass(frozen=True)
class Scene:
    """Layer stack over a background plane, in near-darkness."""

    layers: tuple
    background_depth_m: float
    ambient_level: float = 0.0

    def __post_init__(self):
        layers = tuple(self.layers)
        if self.background_depth_m <= 0:
            raise ValueError(f"background depth must be > 0, got {self.background_depth_m}")
        for lay in layers:
            if lay.depth_m > self.background_depth_m:
                raise ValueError(
                    f"layer at {lay.depth_m} m lies behind the background "
                    f"({self.background_depth_m} m)"
                )
        if not (0.0 <= self.ambient_level <= 1e-3):
            raise ValueError(f"ambient_level must be in [0, 1e-3], got {self.ambient_level}")
        object.__setattr__(self, "layers", layers)

    def validate_against(self, lens: LensConfig) -> None:
        """Check layer geometry and the beyond-focus assumption for ``lens``."""
        zf = lens.focus_distance_m
        for i, lay in enumerate(self.layers):
            if lay.depth_m <= zf:
                raise ValueError(
                    f"layer {i} at {lay.depth_m} m is not beyond the focus "
                    f"distance {zf} m; the sensing model assumes all scene "
                    f"content lies at depth > focus distance"
                )
            if lay.x0 < 0 or lay.y0 < 0 or lay.x1 > lens.sensor_width_px \
                    or lay.y1 > lens.sensor_height_px:
                raise ValueError(
                    f"layer {i} region ({lay.x0},{lay.y0})-({lay.x1},{lay.y1}) "
                    f"exceeds sensor {lens.sensor_width_px}x{lens.sensor_height_px}"
                )
        if self.background_depth_m <= zf:
            raise ValueError(
                f"background at {self.background_depth_m} m is not beyond the "
                f"focus distance {zf} m"
            )


@dataclass(frozen=True)
class LatentImage:
    """All-in-focus intensity plus per-pixel ground-truth depth."""

    intensity: np.ndarray
    depth_map: np.ndarray

    def __post_init__(self):
        inten = np.asarray(self.intensity, dtype=np.float64)
        depth = np.asarray(self.depth_map, dtype=np.float64)
        if inten.shape != depth.shape:
            raise ValueError(f"intensity {inten.shape} vs depth_map {depth.shape}")
        if np.any(inten < 0):
            raise ValueError("latent intensity has negative values")
        for arr in (inten, depth):
            arr.flags.writeable = False
        object.__setattr__(self, "intensity", inten)
        object.__setattr__(self, "depth_map", depth)

    @property
    def height(self) -> int:
        return self.intensity.shape[0]

    @property
    def width(self) -> int:
        return self.intensity.shape[1]


def _disk_coverage(width, height, cx, cy, radius):
    """Anti-aliased disk footprint via 4x4 supersampling of boundary pixels.

    Returns (x0, y0, patch) for the bounding box actually touched.
    """
    x0 = max(0, math.floor(cx - radius - 1))
    x1 = min(width - 1, math.ceil(cx + radius + 1))
    y0 = max(0, math.floor(cy - radius - 1))
    y1 = min(height - 1, math.ceil(cy + radius + 1))
    if x1 < x0 or y1 < y0:
        return x0, y0, np.zeros((0, 0))
    xs = np.arange(x0, x1 + 1)
    ys = np.arange(y0, y1 + 1)
    dx = xs[None, :] - cx
    dy = ys[:, None] - cy
    # Classify pixels by their nearest/farthest corner distance.
    near2 = (np.maximum(np.abs(dx) - 0.5, 0)) ** 2 + (np.maximum(np.abs(dy) - 0.5, 0)) ** 2
    far2 = (np.abs(dx) + 0.5) ** 2 + (np.abs(dy) + 0.5) ** 2
    r2 = radius * radius
    patch = np.zeros((ys.size, xs.size))
    patch[far2 <= r2] = 1.0
    boundary = (near2 <= r2) & (far2 > r2)
    if np.any(boundary):
        by, bx = np.nonzero(boundary)
        sub = (np.arange(4) + 0.5) / 4.0 - 0.5
        sx = xs[bx][:, None, None] + sub[None, :, None]
        sy = ys[by][:, None, None] + sub[None, None, :]
        inside = ((sx - cx) ** 2 + (sy - cy) ** 2) <= r2
        patch[by, bx] = inside.mean(axis=(1, 2))
    return x0, y0, patch


def render_latent(scene: Scene, pattern: DotPattern, lens: LensConfig) -> LatentImage:
    """Project the pattern onto the scene and rasterize the latent image.

    Dots travel along the optical axis onto the front-most layer under
    them and render as anti-aliased disks; pixels elsewhere sit at the
    ambient level. Dots whose centers project off-sensor are dropped.
    """
    scene.validate_against(lens)
    w, h = lens.sensor_width_px, lens.sensor_height_px

    depth = np.full((h, w), scene.background_depth_m)
    for lay in sorted(scene.layers, key=lambda l: -l.depth_m):
        depth[lay.y0:lay.y1, lay.x0:lay.x1] = lay.depth_m

    inten = np.full((h, w), float(scene.ambient_level))
    r = pattern.dot_radius_px
    for x_norm, y_norm, dot_i in pattern.dots:
        cx = x_norm * (w - 1)
        cy = y_norm * (h - 1)
        if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
            continue
        x0, y0, patch = _disk_coverage(w, h, cx, cy, r)
        if patch.size:
            inten[y0:y0 + patch.shape[0], x0:x0 + patch.shape[1]] += dot_i * patch
    return LatentImage(intensity=inten, depth_map=depth)


def scene_from_config(text: str, min_depth_m: float | None = None) -> Scene:
    """Parse the scene file format.

    Directives, one per line: ``background <depth_m>``,
    ``layer <depth_m> <x0> <y0> <x1> <y1>``, ``ambient <level>``.
    When ``min_depth_m`` (the lens focus distance) is given, any layer or
    background at or inside it is rejected up front.
    """
    background = None
    ambient = 0.0
    layers = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "background" and len(parts) == 2:
                background = float(parts[1])
            elif parts[0] == "ambient" and len(parts) == 2:
                ambient = float(parts[1])
            elif parts[0] == "layer" and len(parts) == 6:
                depth = float(parts[1])
                x0, y0, x1, y1 = (int(p) for p in parts[2:])
                layers.append(Layer(depth_m=depth, x0=x0, y0=y0, x1=x1, y1=y1))
            else:
                raise ValueError(f"unknown or malformed directive {parts[0]!r}")
        except ValueError as exc:
            raise ValueError(f"scene config line {lineno}: {exc}") from None
    if background is None:
        raise ValueError("scene config missing 'background' directive")
    if min_depth_m is not None:
        for i, lay in enumerate(layers):
            if lay.depth_m <= min_depth_m:
                raise ValueError(
                    f"layer {i} at {lay.depth_m} m is at or inside the focus "
                    f"distance {min_depth_m} m; scene content must lie beyond it"
                )
        if background <= min_depth_m:
            raise ValueError(
                f"background at {background} m is at or inside the focus "
                f"distance {min_depth_m} m"
            )
    return Scene(layers=tuple(layers), background_depth_m=background,
                 ambient_level=ambient)


def pattern_from_config(text: str) -> DotPattern:
    """Parse the pattern file format.

    ``grid <nx> <ny> <intensity>`` or ``random <n> <seed> <intensity>``,
    plus an optional ``radius <px>`` line.
    """
    radius = DEFAULT_DOT_RADIUS_PX
    spec = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "radius" and len(parts) == 2:
                radius = float(parts[1])
            elif parts[0] == "grid" and len(parts) == 4:
                spec = ("grid", int(parts[1]), int(parts[2]), float(parts[3]))
            elif parts[0] == "random" and len(parts) == 4:
                spec = ("random", int(parts[1]), int(parts[2]), float(parts[3]))
            else:
                raise ValueError(f"unknown or malformed directive {parts[0]!r}")
        except ValueError as exc:
            raise ValueError(f"pattern config line {lineno}: {exc}") from None
    if spec is None:
        raise ValueError("pattern config missing 'grid' or 'random' directive")
    if spec[0] == "grid":
        return DotPattern.grid(spec[1], spec[2], spec[3], dot_radius_px=radius)
    return DotPattern.pseudorandom(spec[1], spec[2], spec[3], dot_radius_px=radius)
