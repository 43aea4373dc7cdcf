"""Depth decoding: per-dot event signatures matched against a template bank.

The decoder is classical template matching: for each bank depth, the event
frame of one isolated dot under a canonical motion is precomputed; observed
dot signatures are then assigned the depth whose template correlates best.
Normalized cross-correlation makes the match invariant to positive scaling
of the event frame, so decoded depth is insensitive to the overall event
rate (and hence to speed, as long as velocity x accumulation time holds).
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from . import formats
from .events import (
    DEFAULT_THRESHOLD,
    EventFrame,
    MotionProfile,
    accumulate_event_counts,
    blur_image,
)
from .optics import PsfBank
from .scene import DotPattern, LatentImage, Scene, render_latent

__all__ = [
    "SignatureBank",
    "DepthEstimate",
    "build_signature_bank",
    "detect_dots",
    "decode_sparse",
    "densify",
    "estimate_depth",
    "export_training_dataset",
]

logger = logging.getLogger(__name__)

CONFIDENCE_FLOOR = 0.1  # densify drops points below this
# Correlation margin mapped to confidence 0.5. Calibrated to the observed
# self-match margins of fine (128-depth) banks, where adjacent templates
# correlate to within ~1e-3: exact matches land around 0.8+, a dead tie
# lands just above the densify floor.
_CONF_MIDPOINT = 2e-4
_CONF_SCALE = 1e-4


@dataclass(frozen=True)
class SignatureBank:
    """Per-depth event signatures of a single dot under a canonical motion."""

    bank: PsfBank
    motion: MotionProfile
    threshold: float
    dot_radius_px: float
    dot_intensity: float
    crop_px: int
    templates: tuple  # zero-mean, unit-energy crops, one per bank depth
    raw_templates: tuple  # raw count crops, same order

    def __post_init__(self):
        if len(self.templates) != len(self.bank.depths_m):
            raise ValueError("one template per bank depth required")
        for t in self.templates:
            if abs(float(t.sum())) > 1e-6 or abs(float((t * t).sum()) - 1.0) > 1e-6:
                raise ValueError("templates must be zero-mean with unit energy")

    @property
    def depths_m(self) -> tuple:
        return self.bank.depths_m

    @property
    def peak_counts(self) -> tuple:
        return tuple(float(r.max()) for r in self.raw_templates)

    def duplicate_adjacent_pairs(self) -> list:
        """Indices i where raw templates at depths i and i+1 are identical."""
        dup = []
        for i in range(len(self.raw_templates) - 1):
            if np.array_equal(self.raw_templates[i], self.raw_templates[i + 1]):
                dup.append(i)
        return dup


@dataclass(frozen=True)
class DepthEstimate:
    """Dense map plus the sparse measurements it was built from."""

    dense_map: np.ndarray
    sparse_points: tuple  # of (x, y, depth_m, confidence)
    metrics: dict | None = None


def _crop_centered(frame: np.ndarray, cx: int, cy: int, size: int) -> np.ndarray:
    """Size x size crop centered at (cx, cy), zero-padded past the borders."""
    r = size // 2
    out = np.zeros((size, size))
    y0, y1 = cy - r, cy + r + 1
    x0, x1 = cx - r, cx + r + 1
    sy0, sx0 = max(0, y0), max(0, x0)
    sy1, sx1 = min(frame.shape[0], y1), min(frame.shape[1], x1)
    if sy1 > sy0 and sx1 > sx0:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = frame[sy0:sy1, sx0:sx1]
    return out


def _weighted_centroid(counts: np.ndarray):
    total = counts.sum()
    ys, xs = np.nonzero(counts)
    w = counts[ys, xs]
    return float((xs * w).sum() / total), float((ys * w).sum() / total)


def _normalize_template(crop: np.ndarray) -> np.ndarray:
    t = crop - crop.mean()
    norm = np.linalg.norm(t)
    if norm == 0:
        raise ValueError("template has no signal (dot produced no events)")
    return t / norm


def simulate_single_dot_frame(bank: PsfBank, depth_m: float, motion: MotionProfile,
                              threshold: float, dot_radius_px: float,
                              dot_intensity: float, canvas_px: int) -> np.ndarray:
    """Event counts of one dot at the canvas center, wall at ``depth_m``."""
    lens = replace(bank.lens, sensor_width_px=canvas_px, sensor_height_px=canvas_px)
    small_bank = PsfBank(lens=lens, aperture=bank.aperture,
                         depths_m=bank.depths_m, psfs=bank.psfs)
    center = (canvas_px - 1) // 2
    u = center / (canvas_px - 1)
    pattern = DotPattern(dots=((u, u, dot_intensity),), dot_radius_px=dot_radius_px,
                         layout="single")
    scene = Scene(layers=(), background_depth_m=depth_m, ambient_level=0.0)
    latent = render_latent(scene, pattern, lens)
    blurred = blur_image(latent, small_bank)
    pos, neg = accumulate_event_counts(blurred, latent, small_bank, motion, threshold)
    return (pos + neg).astype(np.float64)


def template_canvas_px(bank: PsfBank, motion: MotionProfile,
                       dot_radius_px: float) -> int:
    """Canvas size that contains any bank signature with margin to spare."""
    disp = math.hypot(*motion.flow_px_per_s(bank.lens, bank.z_min)) \
        * motion.accumulation_time_s
    size = bank.max_support_px() + 2 * math.ceil(dot_radius_px + 1) \
        + 2 * math.ceil(disp) + 16
    return size if size % 2 == 1 else size + 1


def build_signature_bank(bank: PsfBank, pattern_dot: DotPattern,
                         motion: MotionProfile,
                         threshold: float = DEFAULT_THRESHOLD) -> SignatureBank:
    """Simulate one dot per bank depth and store its normalized signature.

    ``pattern_dot`` supplies the dot radius and intensity; the dot is placed
    at the canvas center so every template shares the same sub-pixel phase.
    """
    if len(pattern_dot.dots) != 1:
        raise ValueError(f"pattern_dot must hold exactly one dot, got {len(pattern_dot.dots)}")
    dot_intensity = pattern_dot.dots[0][2]
    radius = pattern_dot.dot_radius_px
    canvas = template_canvas_px(bank, motion, radius)

    raws = [
        simulate_single_dot_frame(bank, d, motion, threshold, radius,
                                  dot_intensity, canvas)
        for d in bank.depths_m
    ]

    # Common crop size: largest tight signature extent plus 4 px margin.
    extent = 0
    for raw in raws:
        ys, xs = np.nonzero(raw)
        if ys.size == 0:
            raise ValueError(
                "a bank depth produced no events; increase motion or dot intensity"
            )
        extent = max(extent, int(np.ptp(ys)) + 1, int(np.ptp(xs)) + 1)
    crop_px = extent + 4
    if crop_px % 2 == 0:
        crop_px += 1

    raw_crops = []
    templates = []
    for raw in raws:
        cx, cy = _weighted_centroid(raw)
        crop = _crop_centered(raw, round(cx), round(cy), crop_px)
        raw_crops.append(crop)
        templates.append(_normalize_template(crop))

    sig = SignatureBank(bank=bank, motion=motion, threshold=threshold,
                        dot_radius_px=radius, dot_intensity=dot_intensity,
                        crop_px=crop_px, templates=tuple(templates),
                        raw_templates=tuple(raw_crops))
    dup = sig.duplicate_adjacent_pairs()
    if dup:
        logger.warning(
            "signature bank has %d identical adjacent depth templates "
            "(first at index %d); depth resolution is coarser than the bank",
            len(dup), dup[0],
        )
    return sig


def detect_dots(frame: EventFrame, min_mass: float = 5.0,
                activity_floor: float = 0.0,
                peak_min_distance: int = 9,
                merge_px: int = 0) -> list:
    """Find dot signature centroids in an event frame.

    Connected components above ``activity_floor`` with total count at least
    ``min_mass`` yield intensity-weighted centroids; components holding
    several well-separated local maxima are split by watershed first.
    Coded apertures leave holes inside a single signature, so components
    within ``merge_px`` of each other are treated as one.
    """
    counts = frame.counts
    active = counts > activity_floor
    if merge_px > 0:
        # Close small gaps so one dot's fragmented signature labels as one
        # component; mass and centroids still come from the raw counts.
        closed = ndimage.maximum_filter(active, size=2 * merge_px + 1)
        labels, n = ndimage.label(closed, structure=np.ones((3, 3), dtype=int))
        labels[~active] = 0
    else:
        labels, n = ndimage.label(active, structure=np.ones((3, 3), dtype=int))
    centroids = []
    if n == 0:
        return centroids

    smooth = ndimage.uniform_filter(counts, size=3)
    footprint = np.ones((peak_min_distance, peak_min_distance), dtype=bool)
    is_peak = (smooth == ndimage.maximum_filter(smooth, footprint=footprint)) & active

    for comp_id, comp in enumerate(ndimage.find_objects(labels), start=1):
        if comp is None:
            continue
        mask = labels[comp] == comp_id
        blob = counts[comp] * mask
        if blob.sum() < min_mass:
            continue
        # A component no larger than one signature is a single dot; only
        # bigger blobs can be overlaps worth splitting.
        h_c = comp[0].stop - comp[0].start
        w_c = comp[1].stop - comp[1].start
        may_overlap = max(h_c, w_c) > peak_min_distance
        peaks = is_peak[comp] & mask
        peak_labels, n_peaks = ndimage.label(peaks, structure=np.ones((3, 3), dtype=int))
        if may_overlap and n_peaks > 1:
            # Flood from the peaks down the count surface, limited to the blob.
            relief = blob.max() - blob
            relief = np.clip(relief / max(relief.max(), 1e-12) * 60000, 0, 60000)
            markers = peak_labels.astype(np.int32)
            markers[~mask] = -1
            segmented = ndimage.watershed_ift(relief.astype(np.uint16), markers)
            for seg_id in range(1, n_peaks + 1):
                seg_counts = counts[comp] * ((segmented == seg_id) & mask)
                if seg_counts.sum() < min_mass:
                    continue
                cx, cy = _weighted_centroid(seg_counts)
                centroids.append((cx + comp[1].start, cy + comp[0].start))
        else:
            cx, cy = _weighted_centroid(blob)
            centroids.append((cx + comp[1].start, cy + comp[0].start))
    centroids.sort(key=lambda c: (c[1], c[0]))
    return centroids


def decode_sparse(frame: EventFrame, sig: SignatureBank, centroids,
                  refine_top_k: int = 8) -> list:
    """Depth per centroid by correlation against every template.

    Returns (x, y, depth_m, confidence) tuples. Centroids whose crop window
    would leave the frame are skipped (and logged). A first pass scores all
    templates at the centroid crop; the best few are re-scored over +-1 px
    window shifts so a centroid rounded to the wrong pixel cannot flip the
    match. Confidence maps the best-vs-second correlation margin through a
    logistic centered at {mid}. Ties resolve to the nearer depth.
    """
    counts = frame.counts
    h, w = counts.shape
    size = sig.crop_px
    r = size // 2
    depths = np.asarray(sig.depths_m)
    stack = np.stack([t.ravel() for t in sig.templates])
    out = []
    for cx, cy in centroids:
        ix, iy = round(cx), round(cy)
        if ix - r < 1 or iy - r < 1 or ix + r >= w - 1 or iy + r >= h - 1:
            logger.info("centroid (%.1f, %.1f) too close to border; skipped", cx, cy)
            continue
        super_crop = counts[iy - r - 1:iy + r + 2, ix - r - 1:ix + r + 2]
        crop = super_crop[1:-1, 1:-1]
        x = (crop - crop.mean()).ravel()
        norm = np.linalg.norm(x)
        if norm == 0:
            logger.info("centroid (%.1f, %.1f) has constant crop; skipped", cx, cy)
            continue
        scores = stack @ (x / norm)
        # Refine leading candidates over the 9 one-pixel window shifts.
        k = min(refine_top_k, len(scores))
        candidates = np.argpartition(scores, -k)[-k:]
        shift_crops = []
        for dy in (0, 1, 2):
            for dx in (0, 1, 2):
                if dx == 1 and dy == 1:
                    continue
                c = super_crop[dy:dy + size, dx:dx + size]
                v = (c - c.mean()).ravel()
                nv = np.linalg.norm(v)
                shift_crops.append(v / nv if nv > 0 else v)
        shifted = np.stack(shift_crops) if shift_crops else None
        for ci in candidates:
            best_shift = float((shifted @ stack[ci]).max()) if shifted is not None else -1.0
            scores[ci] = max(scores[ci], best_shift)
        best = int(np.argmax(scores))  # first max = nearer depth on ties
        if len(scores) > 1:
            margin = float(scores[best] - np.partition(scores, -2)[-2])
        else:
            margin = 1.0
        conf = 1.0 / (1.0 + math.exp(-(margin - _CONF_MIDPOINT) / _CONF_SCALE))
        out.append((float(cx), float(cy), float(depths[best]), conf))
    return out


decode_sparse.__doc__ = decode_sparse.__doc__.format(mid=_CONF_MIDPOINT)


def densify(sparse_points, width: int, height: int) -> np.ndarray:
    """Nearest-measurement depth fill followed by 5x5 median smoothing.

    Points with confidence below {floor} are excluded; decoding must leave
    at least one usable point.
    """
    usable = [(x, y, d) for x, y, d, conf in sparse_points if conf >= CONFIDENCE_FLOOR]
    if not usable:
        raise ValueError("no sparse points with usable confidence; cannot densify")
    seed_depth = np.zeros((height, width))
    seed_mask = np.ones((height, width), dtype=bool)
    for x, y, d in usable:
        ix = min(max(round(x), 0), width - 1)
        iy = min(max(round(y), 0), height - 1)
        seed_depth[iy, ix] = d
        seed_mask[iy, ix] = False
    ind_y, ind_x = ndimage.distance_transform_edt(seed_mask, return_distances=False,
                                                  return_indices=True)
    dense = seed_depth[ind_y, ind_x]
    return ndimage.median_filter(dense, size=5, mode="nearest")


densify.__doc__ = densify.__doc__.format(floor=CONFIDENCE_FLOOR)


def estimate_depth(frame: EventFrame, sig: SignatureBank,
                   min_mass: float = 5.0,
                   truth_depth_map: np.ndarray | None = None) -> DepthEstimate:
    """Full decode: detect dots, match depths, densify, optional metrics."""
    # Hollow (ring-like) signatures carry local maxima up to one crop apart,
    # so peak suppression must span two crops to avoid splitting one dot;
    # holes inside a coded signature must not fragment it either.
    centroids = detect_dots(frame, min_mass=min_mass,
                            peak_min_distance=2 * sig.crop_px + 1,
                            merge_px=max(3, sig.crop_px // 3))
    points = decode_sparse(frame, sig, centroids)
    h, w = frame.counts.shape
    dense = densify(points, w, h)
    metrics = None
    if truth_depth_map is not None:
        err = [abs(d - truth_depth_map[min(round(y), h - 1), min(round(x), w - 1)])
               for x, y, d, conf in points if conf >= CONFIDENCE_FLOOR]
        span = sig.bank.z_max - sig.bank.z_min
        metrics = {
            "n_points": len(points),
            "l1_mean_m": float(np.mean(err)) if err else float("nan"),
            "percent_error": float(np.mean(err)) / span * 100.0 if err else float("nan"),
        }
    return DepthEstimate(dense_map=dense, sparse_points=tuple(points), metrics=metrics)


def export_training_dataset(bank: PsfBank, pattern: DotPattern, scenes,
                            motion: MotionProfile, out_dir,
                            threshold: float = DEFAULT_THRESHOLD) -> str:
    """Write (event frame, depth map) training pairs plus a manifest.

    Each sample gets an EVF1 event frame and a 16-bit depth PNG with scale
    sidecar; ``manifest.jsonl`` records full provenance per sample so a
    model can be trained without this library.
    """
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    lens = bank.lens
    records = []
    for idx, scene in enumerate(scenes):
        stem = f"sample_{idx:04d}"
        latent = render_latent(scene, pattern, lens)
        blurred = blur_image(latent, bank)
        pos, neg = accumulate_event_counts(blurred, latent, bank, motion, threshold)
        frame_path = os.path.join(out_dir, stem + ".evf")
        depth_path = os.path.join(out_dir, stem + "_depth.png")
        formats.write_event_frame(frame_path, (pos + neg).astype(np.float64))
        scale = formats.write_depth_png(depth_path, latent.depth_map)
        records.append({
            "sample": stem,
            "event_frame": os.path.basename(frame_path),
            "depth_png": os.path.basename(depth_path),
            "scale_m_per_unit": scale,
            "lens": {
                "focal_length_m": lens.focal_length_m,
                "f_number": lens.f_number,
                "focus_distance_m": lens.focus_distance_m,
                "pixel_pitch_m": lens.pixel_pitch_m,
                "sensor_width_px": lens.sensor_width_px,
                "sensor_height_px": lens.sensor_height_px,
            },
            "aperture": bank.aperture.name,
            "bank": {"z_min_m": bank.z_min, "z_max_m": bank.z_max,
                     "n_depths": len(bank.depths_m)},
            "motion": {"velocity_mps": list(motion.velocity_mps),
                       "accumulation_time_s": motion.accumulation_time_s,
                       "substeps": motion.substeps},
            "threshold": threshold,
            "pattern": {"layout": pattern.layout, "n_dots": len(pattern.dots),
                        "dot_radius_px": pattern.dot_radius_px},
            "scene": {"background_depth_m": scene.background_depth_m,
                      "ambient_level": scene.ambient_level,
                      "layers": [[l.depth_m, l.x0, l.y0, l.x1, l.y1]
                                 for l in scene.layers]},
        })
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    formats.atomic_write_text(
        manifest_path,
        "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in records),
    )
    return manifest_path
