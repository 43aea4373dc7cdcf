"""Depth-layered blur, camera-motion advection, and event generation.

Event semantics follow the standard integrate-and-fire contrast model:
a pixel fires whenever its log intensity moves a full threshold away from
the stored reference level, which then advances to the crossed level.
Both polarities carry equal weight when frames are accumulated.

Each depth layer is blurred once with its bank PSF and then advected by
its optical flow per substep; convolution and sub-pixel translation
commute (both are shift-invariant linear operators), so this matches
shifting first and re-blurring, apart from a one-kernel-wide border band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .optics import LensConfig, PsfBank
from .scene import LatentImage

__all__ = [
    "MotionProfile",
    "BlurredImage",
    "EventVolume",
    "EventFrame",
    "blur_image",
    "generate_events",
    "event_frame",
    "accumulate_event_counts",
    "events_from_sequence",
    "oscillation_event_counts",
]

DEFAULT_THRESHOLD = 0.2  # log-intensity contrast threshold
LOG_FLOOR = 1e-4  # added before log() so dark background stays finite
# A pixel that returns exactly to a previously crossed level leaves the
# accumulated log difference on an exact threshold multiple, where the
# floor() decision would hang on the last float bit. Differences within
# this relative tolerance of a boundary count as crossed, deterministically.
FIRE_TOL = 1e-9


@dataclass(frozen=True)
class MotionProfile:
    """Lateral camera translation over one accumulation window."""

    velocity_mps: tuple
    accumulation_time_s: float = 0.05
    substeps: int = 50

    def __post_init__(self):
        v = (float(self.velocity_mps[0]), float(self.velocity_mps[1]))
        if self.accumulation_time_s <= 0:
            raise ValueError(f"accumulation_time_s must be > 0, got {self.accumulation_time_s}")
        if self.substeps < 2:
            raise ValueError(f"substeps must be >= 2, got {self.substeps}")
        object.__setattr__(self, "velocity_mps", v)

    def flow_px_per_s(self, lens: LensConfig, depth_m: float) -> tuple:
        """Image-plane optical flow of a layer at ``depth_m``."""
        scale = lens.focal_length_m / (depth_m * lens.pixel_pitch_m)
        return (self.velocity_mps[0] * scale, self.velocity_mps[1] * scale)

    def reversed(self) -> "MotionProfile":
        vx, vy = self.velocity_mps
        return MotionProfile((-vx, -vy), self.accumulation_time_s, self.substeps)


@dataclass(frozen=True)
class BlurredImage:
    """Observed (defocused) intensity with provenance references."""

    intensity: np.ndarray
    lens: LensConfig
    latent: LatentImage

    def __post_init__(self):
        inten = np.asarray(self.intensity, dtype=np.float64)
        expect = (self.lens.sensor_height_px, self.lens.sensor_width_px)
        if inten.shape != expect:
            raise ValueError(f"blurred intensity {inten.shape} does not match sensor {expect}")
        inten.flags.writeable = False
        object.__setattr__(self, "intensity", inten)


@dataclass(frozen=True)
class EventVolume:
    """Events as parallel columns (x, y, t, p), pixel-major / time-minor."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "t", "p"):
            arr = np.asarray(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not (len(self.x) == len(self.y) == len(self.t) == len(self.p)):
            raise ValueError("event columns must have equal length")

    def __len__(self) -> int:
        return len(self.x)

    def to_csv(self, path) -> None:
        from .formats import atomic_write_text

        lines = ["x,y,t,p"]
        for x, y, t, p in zip(self.x, self.y, self.t, self.p):
            lines.append(f"{x},{y},{t!r},{p:+d}")
        atomic_write_text(path, "\n".join(lines) + "\n")


@dataclass(frozen=True)
class EventFrame:
    """Per-pixel event occurrences over one accumulation window.

    A single window is accumulated, so the "average over windows" here is
    the raw count (normalization constant 1).
    """

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.float64)
        if np.any(c < 0):
            raise ValueError("event counts must be non-negative")
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> float:
        return float(self.counts.sum())


# ---------------------------------------------------------------------------
# Layered blur
# ---------------------------------------------------------------------------

def _layer_parts(latent: LatentImage, bank: PsfBank):
    """Per-depth blurred intensity and coverage, front to back.

    Returns a list of (depth, blurred_intensity, blurred_alpha, flow_scale)
    with flow_scale = focal_length / (depth * pixel_pitch).
    """
    depth_map = latent.depth_map
    depths = np.unique(depth_map)
    lo, hi = bank.z_min, bank.z_max
    for d in depths:
        if d < lo or d > hi:
            ys, xs = np.nonzero(depth_map == d)
            raise ValueError(
                f"depth {d} m at pixel (x={xs[0]}, y={ys[0]}) outside bank "
                f"range [{lo}, {hi}] m"
            )
    parts = []
    single = depths.size == 1
    for d in depths:  # np.unique sorts ascending = front to back
        kernel = bank.psfs[bank.nearest_index(float(d))].kernel
        mask = depth_map == d
        sub = latent.intensity * mask
        if kernel.shape == (1, 1):
            blurred = sub * kernel[0, 0]
            alpha = mask.astype(np.float64)
        else:
            blurred = fftconvolve(sub, kernel, mode="same")
            alpha = None if single else fftconvolve(mask.astype(np.float64), kernel, mode="same")
        flow_scale = bank.lens.focal_length_m / (float(d) * bank.lens.pixel_pitch_m)
        parts.append((float(d), blurred, alpha, flow_scale))
    return parts


def _shift_bilinear(img: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Translate ``img`` by a sub-pixel offset, zeros flowing in at borders."""
    if dx == 0.0 and dy == 0.0:
        return img
    ix, iy = math.floor(dx), math.floor(dy)
    fx, fy = dx - ix, dy - iy
    h, w = img.shape
    # Apply the fractional part on a one-pixel-larger canvas, then crop with
    # the integer offset back onto the sensor grid.
    base = np.zeros((h + 1, w + 1))
    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy
    base[:h, :w] = img * w00
    base[:h, 1:] += img * w10
    base[1:, :w] += img * w01
    base[1:, 1:] += img * w11
    out = np.zeros_like(img)
    # Crop base (origin offset by (iy, ix)) back onto the sensor grid.
    y0s, y0d = (0, iy) if iy >= 0 else (-iy, 0)
    x0s, x0d = (0, ix) if ix >= 0 else (-ix, 0)
    ys = min(h + 1 - y0s, h - y0d)
    xs = min(w + 1 - x0s, w - x0d)
    if ys > 0 and xs > 0:
        out[y0d:y0d + ys, x0d:x0d + xs] = base[y0s:y0s + ys, x0s:x0s + xs]
    return out


def _composite(parts, t: float, motion: MotionProfile | None) -> np.ndarray:
    """Front-to-back over-composite of advected layers at time ``t``.

    A front layer's blurred coverage attenuates everything behind it, so
    its occlusion extends exactly over its PSF-dilated support.
    """
    if len(parts) == 1:
        d, blurred, _, flow_scale = parts[0]
        if motion is None or t == 0.0:
            return blurred
        vx, vy = motion.velocity_mps
        return _shift_bilinear(blurred, vx * flow_scale * t, vy * flow_scale * t)
    out = None
    transmit = None
    for d, blurred, alpha, flow_scale in parts:
        if motion is not None and t != 0.0:
            vx, vy = motion.velocity_mps
            dx, dy = vx * flow_scale * t, vy * flow_scale * t
            blurred = _shift_bilinear(blurred, dx, dy)
            alpha = _shift_bilinear(alpha, dx, dy)
        alpha = np.clip(alpha, 0.0, 1.0)
        if out is None:
            out = blurred.copy()
            transmit = 1.0 - alpha
        else:
            out += transmit * blurred
            transmit = transmit * (1.0 - alpha)
    return out


def blur_image(latent: LatentImage, bank: PsfBank) -> BlurredImage:
    """Apply depth-dependent blur: per-layer convolution, front-to-back composite."""
    parts = _layer_parts(latent, bank)
    return BlurredImage(intensity=_composite(parts, 0.0, None),
                        lens=bank.lens, latent=latent)


# ---------------------------------------------------------------------------
# Event generation
# ---------------------------------------------------------------------------

def _substep_times(motion: MotionProfile):
    dt = motion.accumulation_time_s / motion.substeps
    return [k * dt for k in range(motion.substeps + 1)]


def _fire_step(log_k, ref, threshold):
    """One integrate-and-fire update; returns (pos, neg) int count images."""
    diff = log_k - ref
    quanta = np.floor(np.abs(diff) / threshold + FIRE_TOL).astype(np.int64)
    if quanta.any():
        step = np.sign(diff) * quanta * threshold
        ref += step
        pos = np.where(diff > 0, quanta, 0)
        neg = quanta - pos
        return pos, neg
    z = np.zeros(log_k.shape, dtype=np.int64)
    return z, z


def _run_events(frame0, frame_iter, threshold, collect):
    """Drive integrate-and-fire over a frame sequence.

    ``collect`` gathers per-substep sparse events; otherwise only the
    accumulated count images are produced.
    """
    if threshold <= 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    ref = np.log(frame0 + LOG_FLOOR)
    pos_total = np.zeros(frame0.shape, dtype=np.int64)
    neg_total = np.zeros(frame0.shape, dtype=np.int64)
    per_step = []
    for t_k, frame in frame_iter:
        log_k = np.log(frame + LOG_FLOOR)
        pos, neg = _fire_step(log_k, ref, threshold)
        pos_total += pos
        neg_total += neg
        if collect and (pos.any() or neg.any()):
            per_step.append((t_k, pos, neg))
    return pos_total, neg_total, per_step


def _volume_from_steps(per_step) -> EventVolume:
    xs, ys, ts, ps = [], [], [], []
    for t_k, pos, neg in per_step:
        for counts, pol in ((pos, 1), (neg, -1)):
            yy, xx = np.nonzero(counts)
            if yy.size == 0:
                continue
            rep = counts[yy, xx]
            xs.append(np.repeat(xx, rep))
            ys.append(np.repeat(yy, rep))
            ts.append(np.full(int(rep.sum()), t_k))
            ps.append(np.full(int(rep.sum()), pol, dtype=np.int8))
    if not xs:
        empty = np.array([], dtype=np.int64)
        return EventVolume(x=empty, y=empty.copy(),
                           t=np.array([], dtype=np.float64),
                           p=np.array([], dtype=np.int8))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    t = np.concatenate(ts)
    p = np.concatenate(ps)
    order = np.lexsort((t, x, y))
    return EventVolume(x=x[order], y=y[order], t=t[order], p=p[order])


def generate_events(img: BlurredImage, latent: LatentImage, bank: PsfBank,
                    motion: MotionProfile,
                    threshold: float = DEFAULT_THRESHOLD) -> EventVolume:
    """Simulate camera motion over the scene and emit threshold crossings.

    ``img`` supplies the reference (time-zero) observed image and should be
    ``blur_image(latent, bank)``. Each depth layer advects with its own
    optical flow; per pixel, an event fires every time log intensity moves
    a full threshold from the reference level, which then follows.
    """
    parts = _layer_parts(latent, bank)
    times = _substep_times(motion)

    def frames():
        for t_k in times[1:]:
            yield t_k, _composite(parts, t_k, motion)

    _, _, per_step = _run_events(img.intensity, frames(), threshold, collect=True)
    return _volume_from_steps(per_step)


def accumulate_event_counts(img: BlurredImage, latent: LatentImage, bank: PsfBank,
                            motion: MotionProfile,
                            threshold: float = DEFAULT_THRESHOLD):
    """Fast path to the accumulated (positive, negative) count images.

    Equivalent to binning :func:`generate_events`, without materializing
    the event list.
    """
    parts = _layer_parts(latent, bank)
    times = _substep_times(motion)

    def frames():
        for t_k in times[1:]:
            yield t_k, _composite(parts, t_k, motion)

    pos, neg, _ = _run_events(img.intensity, frames(), threshold, collect=False)
    return pos, neg


def events_from_sequence(frames, dt_s: float,
                         threshold: float = DEFAULT_THRESHOLD) -> EventVolume:
    """Run the integrate-and-fire model over an explicit intensity sequence.

    ``frames`` is an iterable of 2-D intensity images sampled ``dt_s``
    apart; the first frame is the reference.
    """
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if len(frames) < 2:
        raise ValueError("need at least a reference frame and one step")
    seq = ((k * dt_s, f) for k, f in enumerate(frames[1:], start=1))
    _, _, per_step = _run_events(frames[0], seq, threshold, collect=True)
    return _volume_from_steps(per_step)


def event_frame(vol: EventVolume, width: int, height: int) -> EventFrame:
    """Bin a volume into per-pixel counts, both polarities merged."""
    counts = np.zeros((height, width), dtype=np.float64)
    if len(vol):
        x = np.asarray(vol.x, dtype=np.int64)
        y = np.asarray(vol.y, dtype=np.int64)
        bad = (x < 0) | (x >= width) | (y < 0) | (y >= height)
        if np.any(bad):
            i = int(np.nonzero(bad)[0][0])
            raise ValueError(
                f"event {i} at (x={x[i]}, y={y[i]}) outside {width}x{height} frame"
            )
        np.add.at(counts, (y, x), 1.0)
    return EventFrame(counts=counts)


def oscillation_event_counts(img: BlurredImage, latent: LatentImage, bank: PsfBank,
                             motion: MotionProfile,
                             threshold: float = DEFAULT_THRESHOLD):
    """Back-and-forth convenience: two opposite-velocity passes, counts summed.

    Each pass runs half the accumulation window (and half the substeps),
    emulating a camera oscillating about its rest position.
    """
    half = MotionProfile(motion.velocity_mps, motion.accumulation_time_s / 2,
                         max(2, motion.substeps // 2))
    fwd = accumulate_event_counts(img, latent, bank, half, threshold)
    bwd = accumulate_event_counts(img, latent, bank, half.reversed(), threshold)
    return fwd[0] + bwd[0], fwd[1] + bwd[1]
