"""Evaluation protocol: aperture x focus-distance sweeps and sensitivity curves.

A sweep places a flat wall at each object distance, runs the full
simulate-decode pipeline, and records L1 depth error, percent error over
the sensing range, and event counts. Results emit as fixed-format CSV and
self-contained SVG plots, byte-identical for a given spec and seed.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .decoder import build_signature_bank, decode_sparse, detect_dots
from .events import EventFrame, MotionProfile, accumulate_event_counts, blur_image
from .masks import builtin_mask, load_mask
from .optics import LensConfig, blur_sensitivity, build_psf_bank
from .scene import DotPattern, Scene, render_latent
from .svgplot import Panel, Series, write_line_panels
from . import formats

__all__ = [
    "DEFAULT_LENS",
    "DEFAULT_MOTION",
    "BenchSpec",
    "BenchCell",
    "BenchResult",
    "SensitivityTable",
    "percent_error",
    "run_sweep",
    "sensitivity_curves",
    "emit_plots",
    "bench_spec_from_config",
]

DEFAULT_LENS = LensConfig(
    focal_length_m=0.016,
    f_number=1.4,
    focus_distance_m=0.5,
    pixel_pitch_m=1.93e-5,
    sensor_width_px=320,
    sensor_height_px=240,
)

# Canonical capture motion: fast enough that adjacent bank depths imprint
# distinct signatures even for near-delta (pinhole) kernels.
DEFAULT_MOTION = MotionProfile(velocity_mps=(0.16, 0.10),
                               accumulation_time_s=0.05, substeps=50)

_DEFAULT_SWEEP = tuple(round(0.8 + 0.1 * i, 3) for i in range(18))  # 0.8..2.5


def percent_error(l1_m: float, depth_range_m: float) -> float:
    """Percent convention: L1 error over the sensing depth range."""
    return l1_m / depth_range_m * 100.0


@dataclass(frozen=True)
class BenchSpec:
    """Everything a sweep needs; deterministic given the seed."""

    apertures: tuple = ("pinhole", "open", "zhou1", "zhou2", "levin", "w")
    focus_distances_m: tuple = (0.25, 0.50, 0.75)
    object_distances_m: tuple = _DEFAULT_SWEEP
    lens: LensConfig = DEFAULT_LENS
    motion: MotionProfile = DEFAULT_MOTION
    threshold: float = 0.2
    trials: int = 1
    seed: int = 0
    n_depths: int = 128
    bank_z_min: float = 0.78
    bank_z_max: float = 2.55
    wall_dots: tuple = (4, 3)
    wall_margin_px: int = 40
    dot_radius_px: float = 1.5
    dot_intensity: float = 0.9
    min_mass: float = 5.0
    # Wall-clock decode timing is inherently non-reproducible; it stays zero
    # unless explicitly requested so default outputs are byte-stable.
    timing: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        worst_zf = max(self.focus_distances_m)
        bad = [z for z in self.object_distances_m if z <= worst_zf]
        if bad:
            raise ValueError(
                f"object distances {bad} not beyond every focus distance "
                f"(max {worst_zf} m)"
            )
        if not (max(self.focus_distances_m) < self.bank_z_min < self.bank_z_max):
            raise ValueError("need max(focus) < bank_z_min < bank_z_max")

    @property
    def depth_range_m(self) -> float:
        """Sensing range the percent convention divides by (camera to max z)."""
        return max(self.object_distances_m)


@dataclass(frozen=True)
class BenchCell:
    aperture: str
    zf_m: float
    z_m: float
    l1_m: float
    percent_error: float
    event_count: float
    decode_time_s: float
    n_points: int
    error: str | None = None


@dataclass(frozen=True)
class BenchResult:
    spec: BenchSpec
    cells: tuple

    def cell(self, aperture: str, zf_m: float, z_m: float) -> BenchCell:
        for c in self.cells:
            if c.aperture == aperture and c.zf_m == zf_m and c.z_m == z_m:
                return c
        raise KeyError((aperture, zf_m, z_m))

    def mean_l1(self, aperture: str, zf_m: float) -> float:
        vals = [c.l1_m for c in self.cells
                if c.aperture == aperture and c.zf_m == zf_m and c.error is None]
        return float(np.mean(vals)) if vals else float("nan")


def _resolve_mask(name: str):
    if name.endswith(".pgm"):
        return load_mask(name)
    return builtin_mask(name)


def _wall_pattern(spec: BenchSpec, rng) -> DotPattern:
    """Pixel-aligned wall dots, jittered per trial on the integer lattice."""
    nx, ny = spec.wall_dots
    w, h = spec.lens.sensor_width_px, spec.lens.sensor_height_px
    jitter = (int(rng.integers(-8, 9)), int(rng.integers(-8, 9)))
    return DotPattern.pixel_grid(nx, ny, w, h, spec.dot_intensity,
                                 spec.dot_radius_px,
                                 margin_px=spec.wall_margin_px + 8,
                                 offset_px=jitter)


def _run_cell(spec, lens, bank, sig, z, trial_rngs):
    l1s, events, times, n_pts = [], [], [], []
    for rng in trial_rngs:
        pattern = _wall_pattern(spec, rng)
        scene = Scene(layers=(), background_depth_m=z)
        latent = render_latent(scene, pattern, lens)
        blurred = blur_image(latent, bank)
        pos, neg = accumulate_event_counts(blurred, latent, bank, spec.motion,
                                           spec.threshold)
        frame = EventFrame(counts=(pos + neg).astype(np.float64))
        t0 = time.perf_counter() if spec.timing else 0.0
        centroids = detect_dots(frame, min_mass=spec.min_mass,
                                peak_min_distance=2 * sig.crop_px + 1,
                                merge_px=max(3, sig.crop_px // 3))
        points = decode_sparse(frame, sig, centroids)
        elapsed = (time.perf_counter() - t0) if spec.timing else 0.0
        if not points:
            raise ValueError(f"no dots decoded at z={z}")
        l1s.append(float(np.mean([abs(p[2] - z) for p in points])))
        events.append(frame.total)
        times.append(elapsed)
        n_pts.append(len(points))
    l1 = float(np.mean(l1s))
    return l1, float(np.mean(events)), float(np.mean(times)), int(np.mean(n_pts))


def run_sweep(spec: BenchSpec, threads: int = 1) -> BenchResult:
    """Execute the full aperture x focus x distance grid.

    Per-cell failures are recorded in the result and the sweep continues.
    Cells are evaluated independently and reduced in deterministic order.
    """
    jobs = []
    for ai, aperture in enumerate(spec.apertures):
        mask = _resolve_mask(aperture)
        for fi, zf in enumerate(spec.focus_distances_m):
            lens = spec.lens.with_focus(zf)
            bank = build_psf_bank(lens, mask, spec.bank_z_min, spec.bank_z_max,
                                  spec.n_depths)
            single = DotPattern(dots=((0.5, 0.5, spec.dot_intensity),),
                                dot_radius_px=spec.dot_radius_px, layout="single")
            sig = build_signature_bank(bank, single, spec.motion, spec.threshold)
            for zi, z in enumerate(spec.object_distances_m):
                rngs = [np.random.default_rng((spec.seed, ai, fi, zi, t))
                        for t in range(spec.trials)]
                jobs.append((aperture, zf, z, lens, bank, sig, rngs))

    def work(job):
        aperture, zf, z, lens, bank, sig, rngs = job
        try:
            l1, ev, dt, n_pts = _run_cell(spec, lens, bank, sig, z, rngs)
            return BenchCell(aperture, zf, z, l1, percent_error(l1, spec.depth_range_m),
                             ev, dt, n_pts)
        except Exception as exc:  # cell failures must not kill the sweep
            return BenchCell(aperture, zf, z, float("nan"), float("nan"),
                             float("nan"), 0.0, 0, error=str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(work, jobs))
    else:
        cells = [work(j) for j in jobs]
    return BenchResult(spec=spec, cells=tuple(cells))


# ---------------------------------------------------------------------------
# Sensitivity curves
# ---------------------------------------------------------------------------

_N_SWEEP_FOCAL_M = 0.035
_F_SWEEP_FNUMBER = 16.0
_DEFAULT_N_LIST = (1.4, 2.0, 2.8, 4.0, 5.6, 8.0, 11.0, 16.0)
_DEFAULT_F_LIST = (0.008, 0.012, 0.016, 0.024, 0.035, 0.050)


@dataclass(frozen=True)
class SensitivityTable:
    """Blur-sensitivity ds/dZ sampled over object distance per configuration."""

    focus_distance_m: float
    z_m: tuple
    n_sweep: tuple  # of (f_number, values tuple)
    f_sweep: tuple  # of (focal_length_m, values tuple)


def sensitivity_curves(f_list=None, n_list=None, focus_distance_m: float = 0.5,
                       z_min: float = 0.6, z_max: float = 3.0,
                       n_points: int = 61,
                       f_for_n_sweep: float = _N_SWEEP_FOCAL_M,
                       n_for_f_sweep: float = _F_SWEEP_FNUMBER) -> SensitivityTable:
    """Tabulate ds/dZ against distance for varying f-number and focal length."""
    if z_min <= focus_distance_m:
        raise ValueError(
            f"z range must start beyond the focus distance {focus_distance_m} m, "
            f"got z_min={z_min}"
        )
    n_list = tuple(n_list) if n_list else _DEFAULT_N_LIST
    f_list = tuple(f_list) if f_list else _DEFAULT_F_LIST
    zs = tuple(float(z) for z in np.linspace(z_min, z_max, n_points))

    def lens_for(f, n):
        return replace(DEFAULT_LENS, focal_length_m=f, f_number=n,
                       focus_distance_m=focus_distance_m)

    n_sweep = tuple(
        (n, tuple(blur_sensitivity(lens_for(f_for_n_sweep, n), z) for z in zs))
        for n in n_list
    )
    f_sweep = tuple(
        (f, tuple(blur_sensitivity(lens_for(f, n_for_f_sweep), z) for z in zs))
        for f in f_list
    )
    return SensitivityTable(focus_distance_m=focus_distance_m, z_m=zs,
                            n_sweep=n_sweep, f_sweep=f_sweep)


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

def _bench_csv(result: BenchResult) -> str:
    lines = ["aperture,Zf_m,z_m,l1_m,pct,events,decode_s"]
    for c in result.cells:
        lines.append(
            f"{c.aperture},{c.zf_m:.6f},{c.z_m:.6f},{c.l1_m:.6f},"
            f"{c.percent_error:.6f},{c.event_count:.6f},{c.decode_time_s:.6f}"
        )
    return "\n".join(lines) + "\n"


def _sensitivity_csv(table: SensitivityTable) -> str:
    # repr() round-trips doubles exactly, so downstream checks of scaling
    # identities hold on the parsed file.
    lines = ["sweep,param,z_m,ds_dz"]
    for n, vals in table.n_sweep:
        for z, v in zip(table.z_m, vals):
            lines.append(f"N,{n!r},{z!r},{v!r}")
    for f, vals in table.f_sweep:
        for z, v in zip(table.z_m, vals):
            lines.append(f"f,{f!r},{z!r},{v!r}")
    return "\n".join(lines) + "\n"


def emit_plots(obj, out_dir) -> dict:
    """Write CSV (always) and SVG plots for a sweep result or curve table."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    written = {}
    if isinstance(obj, BenchResult):
        csv_path = os.path.join(out_dir, "bench.csv")
        formats.atomic_write_text(csv_path, _bench_csv(obj))
        written["csv"] = csv_path
        panels = []
        for zf in obj.spec.focus_distances_m:
            panel = Panel(title=f"focus {zf:g} m", xlabel="object distance z (m)",
                          ylabel="L1 depth error (m)")
            for aperture in obj.spec.apertures:
                cells = [c for c in obj.cells
                         if c.aperture == aperture and c.zf_m == zf]
                cells.sort(key=lambda c: c.z_m)
                panel.series.append(Series(
                    label=aperture,
                    xs=[c.z_m for c in cells],
                    ys=[c.l1_m for c in cells],
                ))
            panels.append(panel)
        svg_path = os.path.join(out_dir, "bench.svg")
        write_line_panels(panels, svg_path)
        written["svg"] = svg_path
    elif isinstance(obj, SensitivityTable):
        csv_path = os.path.join(out_dir, "sensitivity.csv")
        formats.atomic_write_text(csv_path, _sensitivity_csv(obj))
        written["csv"] = csv_path
        p1 = Panel(title=f"varying f-number (Zf={obj.focus_distance_m:g} m)",
                   xlabel="object distance z (m)", ylabel="ds/dZ", logy=True)
        for n, vals in obj.n_sweep:
            p1.series.append(Series(label=f"N={n:g}", xs=list(obj.z_m), ys=list(vals)))
        p2 = Panel(title="varying focal length",
                   xlabel="object distance z (m)", ylabel="ds/dZ", logy=True)
        for f, vals in obj.f_sweep:
            p2.series.append(Series(label=f"f={f * 1000:g}mm", xs=list(obj.z_m),
                                    ys=list(vals)))
        svg_path = os.path.join(out_dir, "sensitivity.svg")
        write_line_panels([p1, p2], svg_path)
        written["svg"] = svg_path
    else:
        raise TypeError(f"cannot emit plots for {type(obj).__name__}")
    return written


# ---------------------------------------------------------------------------
# Spec file parsing
# ---------------------------------------------------------------------------

def _parse_float_list(value: str) -> tuple:
    value = value.strip()
    if ":" in value:
        start, stop, step = (float(p) for p in value.split(":"))
        out = []
        v = start
        while v <= stop + step * 1e-9:
            out.append(round(v, 9))
            v += step
        return tuple(out)
    return tuple(float(p) for p in value.split(","))


def bench_spec_from_config(text: str, seed: int) -> BenchSpec:
    """Parse a key=value bench spec file.

    Lists are comma separated; ``object_distances_m`` also accepts
    ``start:stop:step``. Lens fields use their ``lens_`` prefix; unknown
    keys are rejected with their line number.
    """
    kw = {}
    lens_kw = {}
    motion_kw = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bench spec line {lineno}: expected key=value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        try:
            if key == "apertures":
                kw["apertures"] = tuple(p.strip() for p in val.split(","))
            elif key in ("focus_distances_m", "object_distances_m"):
                kw[key] = _parse_float_list(val)
            elif key in ("threshold", "bank_z_min", "bank_z_max", "dot_radius_px",
                         "dot_intensity", "min_mass"):
                kw[key] = float(val)
            elif key in ("trials", "n_depths", "wall_margin_px"):
                kw[key] = int(val)
            elif key == "wall_dots":
                nx, ny = (int(p) for p in val.split(","))
                kw["wall_dots"] = (nx, ny)
            elif key == "timing":
                kw["timing"] = val.lower() in ("1", "true", "yes")
            elif key.startswith("lens_"):
                field_name = key[len("lens_"):]
                lens_kw[field_name] = int(val) if field_name.endswith("_px") else float(val)
            elif key in ("vx", "vy"):
                motion_kw[key] = float(val)
            elif key == "dt":
                motion_kw["accumulation_time_s"] = float(val)
            elif key == "substeps":
                motion_kw["substeps"] = int(val)
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ValueError(f"bench spec line {lineno}: {exc}") from None
    if lens_kw:
        kw["lens"] = replace(DEFAULT_LENS, **lens_kw)
    if motion_kw:
        vx = motion_kw.pop("vx", DEFAULT_MOTION.velocity_mps[0])
        vy = motion_kw.pop("vy", DEFAULT_MOTION.velocity_mps[1])
        kw["motion"] = MotionProfile(velocity_mps=(vx, vy), **{
            "accumulation_time_s": motion_kw.get("accumulation_time_s",
                                                 DEFAULT_MOTION.accumulation_time_s),
            "substeps": motion_kw.get("substeps", DEFAULT_MOTION.substeps),
        })
    return BenchSpec(seed=seed, **kw)
