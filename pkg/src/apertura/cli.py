"""Command-line front end for the simulation, decoding, and benchmark pipeline.

Subcommands: ``psf``, ``simulate``, ``decode``, ``bench``, ``sensitivity``,
``dataset``. Every run is deterministic given its seed; outputs are written
atomically (temp file + rename), and any error exits nonzero with a one-line
diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import formats
from .benchmark import (
    DEFAULT_LENS,
    DEFAULT_MOTION,
    bench_spec_from_config,
    emit_plots,
    run_sweep,
    sensitivity_curves,
)
from .decoder import (
    build_signature_bank,
    estimate_depth,
    export_training_dataset,
)
from .events import EventFrame, MotionProfile, accumulate_event_counts, blur_image
from .masks import BUILTIN_MASKS, builtin_mask, load_mask
from .optics import build_psf_bank, lens_from_config, synthesize_psf
from .scene import DotPattern, pattern_from_config, render_latent, scene_from_config
from .svgplot import write_contact_sheet

__all__ = ["main", "RunConfig"]


@dataclass
class RunConfig:
    """Resolved invocation: subcommand, input paths, output dir, seed, overrides."""

    subcommand: str
    paths: dict = field(default_factory=dict)
    out_dir: str = "."
    seed: int | None = None
    threads: int = 1
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        for role, path in self.paths.items():
            if path and not os.path.exists(path):
                raise FileNotFoundError(f"{role} file not found: {path}")
        os.makedirs(self.out_dir, exist_ok=True)


def _threads_from(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("APERTURA_THREADS")
    return max(1, int(env)) if env else 1


def _read(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _load_lens(args):
    lens = lens_from_config(_read(args.lens)) if args.lens else DEFAULT_LENS
    over = dict(kv.split("=", 1) for kv in (args.set or []))
    lens_fields = {}
    for key, val in over.items():
        if key in ("focal_length_m", "f_number", "focus_distance_m", "pixel_pitch_m"):
            lens_fields[key] = float(val)
        elif key in ("sensor_width_px", "sensor_height_px"):
            lens_fields[key] = int(val)
    if lens_fields:
        from dataclasses import replace

        lens = replace(lens, **lens_fields)
    return lens


def _load_aperture(name: str):
    if name.endswith(".pgm"):
        return load_mask(name)
    if name in BUILTIN_MASKS:
        return builtin_mask(name)
    raise ValueError(f"aperture must be a builtin name {BUILTIN_MASKS} or a .pgm path, "
                     f"got {name!r}")


def _motion_from(args) -> MotionProfile:
    return MotionProfile(velocity_mps=(args.vx, args.vy),
                         accumulation_time_s=args.dt, substeps=args.substeps)


def _add_motion_flags(p):
    p.add_argument("--vx", type=float, default=DEFAULT_MOTION.velocity_mps[0],
                   help="camera x velocity, m/s")
    p.add_argument("--vy", type=float, default=DEFAULT_MOTION.velocity_mps[1],
                   help="camera y velocity, m/s")
    p.add_argument("--dt", type=float, default=DEFAULT_MOTION.accumulation_time_s,
                   help="event accumulation window, s")
    p.add_argument("--substeps", type=int, default=DEFAULT_MOTION.substeps)
    p.add_argument("--threshold", type=float, default=0.2,
                   help="event contrast threshold, log units")


def _add_bank_flags(p):
    p.add_argument("--z-min", type=float, default=0.78)
    p.add_argument("--z-max", type=float, default=2.55)
    p.add_argument("--n-depths", type=int, default=128)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_psf(args) -> int:
    lens = _load_lens(args)
    mask = _load_aperture(args.aperture)
    depths = [float(d) for d in args.depths.split(",")]
    entries = []
    meta = [f"aperture={mask.name}", f"focal_length_m={lens.focal_length_m!r}",
            f"f_number={lens.f_number!r}", f"focus_distance_m={lens.focus_distance_m!r}"]
    for z in depths:
        psf = synthesize_psf(lens, mask, z)
        stem = f"psf_{mask.name}_{z:g}m"
        out = os.path.join(args.out_dir, stem + ".pgm")
        peak = psf.kernel.max()
        formats.write_pgm(out, psf.kernel / peak if peak > 0 else psf.kernel)
        entries.append((f"z={z:g}m ({psf.support_px}px)", psf.kernel))
        meta.append(f"psf z={z!r} support_px={psf.support_px} file={os.path.basename(out)}")
    sheet = os.path.join(args.out_dir, f"psf_{mask.name}_sheet.svg")
    write_contact_sheet(entries, sheet, title=f"{mask.name} aperture PSF vs depth")
    formats.atomic_write_text(os.path.join(args.out_dir, f"psf_{mask.name}_meta.txt"),
                              "\n".join(meta) + "\n")
    print(f"wrote {len(depths)} PSF kernels and {sheet}")
    return 0


def _cmd_simulate(args) -> int:
    lens = _load_lens(args)
    mask = _load_aperture(args.aperture)
    scene = scene_from_config(_read(args.scene), min_depth_m=lens.focus_distance_m)
    if args.pattern:
        pattern = pattern_from_config(_read(args.pattern))
    else:
        pattern = DotPattern.pseudorandom(400, args.seed, 0.9)
    bank = build_psf_bank(lens, mask, args.z_min, args.z_max, args.n_depths)
    motion = _motion_from(args)
    latent = render_latent(scene, pattern, lens)
    blurred = blur_image(latent, bank)
    pos, neg = accumulate_event_counts(blurred, latent, bank, motion, args.threshold)
    frame_path = os.path.join(args.out_dir, "frame.evf")
    depth_path = os.path.join(args.out_dir, "depth_truth.png")
    formats.write_event_frame(frame_path, (pos + neg).astype(np.float64))
    formats.write_depth_png(depth_path, latent.depth_map)
    print(f"wrote {frame_path} ({int((pos + neg).sum())} events) and {depth_path}")
    return 0


def _decode_config(text: str):
    """decode config: lens_* keys plus aperture/bank/motion/threshold settings."""
    lens_lines = []
    other = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"decode config line {lineno}: expected key=value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key.startswith("lens_"):
            lens_lines.append(f"{key[len('lens_'):]}={val}")
        else:
            other[key] = val
    lens = lens_from_config("\n".join(lens_lines)) if lens_lines else DEFAULT_LENS
    motion = MotionProfile(
        velocity_mps=(float(other.get("vx", DEFAULT_MOTION.velocity_mps[0])),
                      float(other.get("vy", DEFAULT_MOTION.velocity_mps[1]))),
        accumulation_time_s=float(other.get("dt", DEFAULT_MOTION.accumulation_time_s)),
        substeps=int(other.get("substeps", DEFAULT_MOTION.substeps)),
    )
    return {
        "lens": lens,
        "aperture": other.get("aperture", "w"),
        "z_min": float(other.get("z_min", 0.78)),
        "z_max": float(other.get("z_max", 2.55)),
        "n_depths": int(other.get("n_depths", 128)),
        "motion": motion,
        "threshold": float(other.get("threshold", 0.2)),
        "min_mass": float(other.get("min_mass", 5.0)),
        "dot_radius_px": float(other.get("dot_radius_px", 1.5)),
        "dot_intensity": float(other.get("dot_intensity", 0.9)),
    }


def _cmd_decode(args) -> int:
    cfg = _decode_config(_read(args.config))
    lens = cfg["lens"]
    mask = _load_aperture(cfg["aperture"])
    counts = formats.read_event_frame(args.frame)
    if counts.shape != (lens.sensor_height_px, lens.sensor_width_px):
        raise ValueError(
            f"frame {counts.shape[1]}x{counts.shape[0]} does not match configured "
            f"sensor {lens.sensor_width_px}x{lens.sensor_height_px}"
        )
    bank = build_psf_bank(lens, mask, cfg["z_min"], cfg["z_max"], cfg["n_depths"])
    single = DotPattern(dots=((0.5, 0.5, cfg["dot_intensity"]),),
                        dot_radius_px=cfg["dot_radius_px"], layout="single")
    sig = build_signature_bank(bank, single, cfg["motion"], cfg["threshold"])
    truth = formats.read_depth_png(args.truth) if args.truth else None
    est = estimate_depth(EventFrame(counts=counts), sig, min_mass=cfg["min_mass"],
                         truth_depth_map=truth)
    dense_path = os.path.join(args.out_dir, "depth_dense.png")
    formats.write_depth_png(dense_path, est.dense_map)
    sparse_path = os.path.join(args.out_dir, "depth_sparse.csv")
    lines = ["x,y,depth_m,confidence"]
    for x, y, d, c in est.sparse_points:
        lines.append(f"{x:.2f},{y:.2f},{d:.6f},{c:.4f}")
    formats.atomic_write_text(sparse_path, "\n".join(lines) + "\n")
    msg = f"wrote {dense_path} and {sparse_path} ({len(est.sparse_points)} points)"
    if est.metrics is not None:
        metrics_path = os.path.join(args.out_dir, "metrics.txt")
        formats.atomic_write_text(
            metrics_path,
            "".join(f"{k}={v!r}\n" for k, v in sorted(est.metrics.items())),
        )
        msg += f"; l1={est.metrics['l1_mean_m']:.4f} m"
    print(msg)
    return 0


def _cmd_bench(args) -> int:
    spec = bench_spec_from_config(_read(args.spec) if args.spec else "", args.seed)
    result = run_sweep(spec, threads=_threads_from(args))
    written = emit_plots(result, args.out_dir)
    failures = [c for c in result.cells if c.error]
    print(f"wrote {written['csv']} and {written['svg']} "
          f"({len(result.cells)} cells, {len(failures)} failed)")
    for c in failures:
        print(f"  cell {c.aperture}/Zf={c.zf_m:g}/z={c.z_m:g} failed: {c.error}",
              file=sys.stderr)
    return 0


def _cmd_sensitivity(args) -> int:
    f_list = [float(v) for v in args.f_list.split(",")] if args.f_list else None
    n_list = [float(v) for v in args.n_list.split(",")] if args.n_list else None
    table = sensitivity_curves(f_list=f_list, n_list=n_list,
                               focus_distance_m=args.zf,
                               z_min=args.z_start, z_max=args.z_stop,
                               n_points=args.z_points)
    written = emit_plots(table, args.out_dir)
    print(f"wrote {written['csv']} and {written['svg']}")
    return 0


def _cmd_dataset(args) -> int:
    lens = _load_lens(args)
    mask = _load_aperture(args.aperture)
    bank = build_psf_bank(lens, mask, args.z_min, args.z_max, args.n_depths)
    motion = _motion_from(args)
    if args.pattern:
        pattern = pattern_from_config(_read(args.pattern))
    else:
        pattern = DotPattern.pseudorandom(400, args.seed, 0.9)
    scenes = [scene_from_config(_read(p), min_depth_m=lens.focus_distance_m)
              for p in args.scenes]
    manifest = export_training_dataset(bank, pattern, scenes, motion,
                                       args.out_dir, threshold=args.threshold)
    print(f"wrote {len(scenes)} samples; manifest at {manifest}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="apertura",
        description="Coded-aperture event-camera depth simulation and decoding",
    )
    sub = ap.add_subparsers(dest="subcommand", required=True)

    def common(p, seed_required=False):
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap (default: APERTURA_THREADS or 1)")
        p.add_argument("--seed", type=int, required=seed_required,
                       default=None if seed_required else 0,
                       help="run seed" + (" (required)" if seed_required else ""))
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a lens config field")

    p = sub.add_parser("psf", help="synthesize PSF kernels over depths")
    common(p)
    p.add_argument("--lens", help="lens key=value config file")
    p.add_argument("--aperture", required=True)
    p.add_argument("--depths", required=True, help="comma list of depths in m")
    p.set_defaults(func=_cmd_psf)

    p = sub.add_parser("simulate", help="render scene, blur, generate event frame")
    common(p, seed_required=True)
    p.add_argument("--lens")
    p.add_argument("--aperture", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--pattern", help="pattern config file (default: random 400 dots)")
    _add_motion_flags(p)
    _add_bank_flags(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("decode", help="decode an event frame to metric depth")
    common(p)
    p.add_argument("--frame", required=True, help="EVF1 event frame")
    p.add_argument("--config", required=True, help="decode key=value config")
    p.add_argument("--truth", help="ground-truth 16-bit depth PNG for metrics")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("bench", help="run the aperture benchmark sweep")
    common(p, seed_required=True)
    p.add_argument("--spec", help="bench spec key=value file (default spec if omitted)")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("sensitivity", help="emit blur-sensitivity curves")
    common(p)
    p.add_argument("--zf", type=float, default=0.5, help="focus distance, m")
    p.add_argument("--f-list", help="comma list of focal lengths, m")
    p.add_argument("--n-list", help="comma list of f-numbers")
    p.add_argument("--z-start", type=float, default=0.6)
    p.add_argument("--z-stop", type=float, default=3.0)
    p.add_argument("--z-points", type=int, default=61)
    p.set_defaults(func=_cmd_sensitivity)

    p = sub.add_parser("dataset", help="export a synthetic training dataset")
    common(p, seed_required=True)
    p.add_argument("--lens")
    p.add_argument("--aperture", required=True)
    p.add_argument("--pattern")
    p.add_argument("--scenes", nargs="+", required=True, help="scene config files")
    _add_motion_flags(p)
    _add_bank_flags(p)
    p.set_defaults(func=_cmd_dataset)

    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        paths = {role: getattr(args, role, None)
                 for role in ("lens", "aperture", "scene", "pattern", "frame",
                              "config", "spec", "truth")}
        paths = {k: v for k, v in paths.items()
                 if v and (k != "aperture" or v.endswith(".pgm"))}
        RunConfig(subcommand=args.subcommand, paths=paths, out_dir=args.out_dir,
                  seed=args.seed, threads=_threads_from(args),
                  overrides=dict(kv.split("=", 1) for kv in (args.set or [])))
        return args.func(args)
    except Exception as exc:
        print(f"apertura {args.subcommand}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
