"""marforge command line.

    marforge phantom  --kind hip --size 512 --out runs/phantom
    marforge simulate --input runs/phantom/phantom.mhd --metal runs/phantom/metal_mask.mhd --out runs/sim.mhd
    marforge nmar     --input runs/sim.mhd --out runs/nmar.mhd
    marforge evaluate --pred pred.mhd --ref ref.mhd --remove-islands
    marforge render   --input runs/nmar.mhd --out runs/png
    marforge pipeline --size 256 --out runs/pipeline
    marforge replay   runs/sim.manifest.json

Logs go to stderr; only ``evaluate`` writes machine output to stdout.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, io, metrics, phantom, physics, plotting
from .config import (describe_mar, describe_simulation, load_document, mar_config,
                     simulation_config)
from .core import ScanGeometry, Sinogram, Unit, ValidationError, Volume
from .mar import nmar, segment_metal
from .parallel import get_threads, set_threads

log = logging.getLogger("marforge")

SLICE_THICKNESS_MM = 2.0
# polychromatic bone reconstructs near 400 HU after water-only BHC
PIPELINE_BONE_HU = 200.0


class CliError(Exception):
    pass


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.suffix == "" else out.with_suffix(".manifest.json")


def _write_manifest(args, config: dict, inputs: dict, outputs: list, out: Path, seed=None):
    manifest = {
        "tool": "marforge",
        "version": __version__,
        "subcommand": args.command,
        "argv": args.argv,
        "config": config,
        "seed": seed,
        "threads": get_threads(),
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "outputs": [str(p) for p in outputs],
    }
    path = io.write_json(manifest, _manifest_path(out))
    log.info("wrote %s", path)
    return path


def _stack_like(mask2d: np.ndarray, nz: int) -> np.ndarray:
    return np.repeat(mask2d[np.newaxis], nz, axis=0)


# ------------------------------------------------------------- subcommands

def cmd_phantom(args):
    out = Path(args.out)
    spacing_z = SLICE_THICKNESS_MM
    if args.kind == "hip":
        img, metal, roi = phantom.hip_phantom(args.size, with_metal=args.metal)
        extras = {"metal_mask": metal, "soft_roi": roi}
    elif args.kind == "shepp-logan":
        img = phantom.shepp_logan(args.size, args.spacing)
        x, y = phantom.pixel_centers(args.size, args.spacing)
        support = phantom.shepp_logan_ellipses(args.size * args.spacing / 2.0)[0]
        interior = phantom.EllipseSpec(support.center,
                                       tuple(0.9 * a for a in support.semi_axes)).contains(x, y)
        extras = {"metal_mask": np.zeros(img.values.shape, bool), "interior_roi": interior}
    else:
        img, center, annulus = phantom.water_cylinder(args.size)
        extras = {"metal_mask": np.zeros(img.values.shape, bool), "center_roi": center,
                  "annulus_roi": annulus}
    spacing = (img.pixel_spacing, img.pixel_spacing, spacing_z)
    outputs = [io.write_volume(Volume(_stack_like(img.values, args.slices), spacing, Unit.HU),
                               out / "phantom.mhd")]
    for name, mask in extras.items():
        vol = Volume(_stack_like(mask.astype(np.float32), args.slices), spacing, Unit.LABEL)
        outputs.append(io.write_volume(vol, out / f"{name}.mhd"))
    config = {"kind": args.kind, "size": args.size, "metal": args.metal, "slices": args.slices,
              "pixel_spacing_mm": img.pixel_spacing, "slice_thickness_mm": spacing_z}
    _write_manifest(args, config, {}, outputs, out)
    return 0


def _load_doc(args):
    return load_document(args.config) if getattr(args, "config", None) else {}


def _sim_config(args, doc):
    overrides = {
        "seed": args.seed,
        "e0": args.e0,
        "n0": args.n0,
        "n_views": args.views,
        "noise_enabled": False if args.no_noise else None,
        "bhc_enabled": False if args.no_bhc else None,
        "spectrum": args.spectrum,
    }
    cfg = simulation_config(doc, **overrides)
    sources = {}
    if args.spectrum or isinstance(doc.get("spectrum"), str):
        sources["spectrum"] = str(args.spectrum or doc["spectrum"])
    if isinstance(doc.get("materials"), dict):
        sources["materials"] = doc["materials"]
    return cfg, sources


def cmd_simulate(args):
    doc = _load_doc(args)
    cfg, sources = _sim_config(args, doc)
    vol = io.read_volume(args.input)
    if args.metal:
        metal = io.read_volume(args.metal).values > 0.5
    else:
        metal = np.zeros(vol.values.shape, dtype=bool)
    if metal.shape != vol.values.shape:
        raise CliError(f"metal mask shape {metal.shape} does not match volume {vol.values.shape}")
    dumps = [] if args.dump_sinograms else None
    out_vol = physics.simulate_artifact(vol, metal, cfg, dumps=dumps)
    out = Path(args.out)
    outputs = [io.write_volume(out_vol, out)]
    if dumps is not None:
        n = max(vol.values.shape[1:])
        geom = cfg.resolved_geometry((n, n), vol.spacing[0])
        for z, dump in enumerate(dumps):
            for stage, values in dump.items():
                path = Path(args.dump_sinograms) / f"{stage}_z{z:03d}.json"
                outputs.append(io.write_sinogram(_sino(geom, values), path))
    described = describe_simulation(cfg, sources)
    described["geometry"] = described.get("geometry") or _geometry_dict(cfg, vol)
    _write_manifest(args, {"simulation": described}, {"input": args.input, "metal": args.metal,
                                                      "config": args.config},
                    outputs, out, seed=int(cfg.seed))
    return 0


def _sino(geom, values):
    return Sinogram(geom, values)


def _geometry_dict(cfg, vol):
    n = max(vol.values.shape[1:])
    g = cfg.resolved_geometry((n, n), vol.spacing[0])
    return {"n_views": g.n_views, "n_detectors": g.n_detectors,
            "detector_spacing": g.detector_spacing}


def cmd_nmar(args):
    doc = _load_doc(args)
    cfg = mar_config(doc, metal_threshold=args.metal_threshold, air_threshold=args.air_threshold,
                     bone_threshold=args.bone_threshold, e0=args.e0)
    vol = io.read_volume(args.input)
    n = max(vol.values.shape[1:])
    n_views = args.views or doc.get("n_views") or 720
    geom = ScanGeometry.default_for(n, vol.spacing[0], int(n_views))
    dumps = [] if (args.dump_prior or args.dump_trace) else None
    out_vol = nmar(vol, geom, cfg, method=args.method, dumps=dumps)
    out = Path(args.out)
    outputs = [io.write_volume(out_vol, out)]
    if args.dump_prior:
        priors = [d["prior"] if d["prior"] is not None else vol.values[z]
                  for z, d in enumerate(dumps)]
        outputs.append(io.write_volume(Volume(np.stack(priors), vol.spacing, Unit.HU),
                                       args.dump_prior))
    if args.dump_trace:
        for z, d in enumerate(dumps):
            path = Path(args.dump_trace) / f"trace_z{z:03d}.json"
            outputs.append(io.write_sinogram(_sino(geom, d["trace"].astype(np.float64)), path))
    config = {"mar": describe_mar(cfg), "method": args.method,
              "geometry": {"n_views": geom.n_views, "n_detectors": geom.n_detectors,
                           "detector_spacing": geom.detector_spacing}}
    _write_manifest(args, config, {"input": args.input, "config": args.config}, outputs, out)
    return 0


def _labels(path):
    vol = io.read_volume(path)
    return vol, np.rint(vol.values).astype(np.int64)


def cmd_evaluate(args):
    pred_vol, pred = _labels(args.pred)
    ref_vol, ref = _labels(args.ref)
    if pred.shape != ref.shape:
        raise CliError(f"prediction shape {pred.shape} != reference shape {ref.shape}")
    if args.remove_islands:
        pred = metrics.remove_islands(pred, args.island_fraction)
    sx, sy, sz = ref_vol.spacing
    report = metrics.evaluate_labels(pred, ref, (sz, sy, sx))
    if args.image:
        image = io.read_volume(args.image).values
        if args.roi:
            report.streak_std_hu = metrics.region_std(image, io.read_volume(args.roi).values > 0.5)
        if args.center_roi and args.annulus_roi:
            report.cupping_hu = metrics.cupping(image, io.read_volume(args.center_roi).values > 0.5,
                                                io.read_volume(args.annulus_roi).values > 0.5)
    for s in report.per_label:
        if s.error:
            log.warning("label %d: %s", s.label, s.error)
    text = report.to_json(indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        _write_manifest(args, {"remove_islands": args.remove_islands,
                               "island_fraction": args.island_fraction},
                        {"pred": args.pred, "ref": args.ref, "image": args.image, "roi": args.roi},
                        [args.out], Path(args.out))
    else:
        sys.stdout.write(text + "\n")
    scored = report.asd_mm is not None or report.streak_std_hu is not None or report.cupping_hu is not None
    return 0 if scored else 1


def _parse_window(text: str) -> io.RenderConfig:
    try:
        low, high = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must be 'low,high', got {text!r}") from None
    try:
        return io.RenderConfig(low, high)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def cmd_render(args):
    vol = io.read_volume(args.input)
    nz = vol.values.shape[0]
    indices = args.slice if args.slice else [nz // 2]
    out = Path(args.out)
    outputs = []
    for k in indices:
        if not 0 <= k < nz:
            raise CliError(f"slice index {k} out of range for {nz} slices")
        outputs.append(io.export_slice_png(vol, k, out / f"{Path(args.input).stem}_z{k:03d}.png",
                                           args.window))
    _write_manifest(args, {"window": [args.window.window_low, args.window.window_high],
                           "slices": indices}, {"input": args.input}, outputs, out)
    return 0


def cmd_pipeline(args):
    """Hip phantom with and without iron, simulated, corrected, scored and plotted."""
    out = Path(args.out)
    doc = _load_doc(args)
    cfg, sources = _sim_config(args, doc)
    mcfg = mar_config(doc, e0=cfg.e0)
    clean = phantom.hip_phantom(args.size, with_metal=False)[0]
    dirty, metal, roi = phantom.hip_phantom(args.size, with_metal=True)
    spacing = (clean.pixel_spacing, clean.pixel_spacing, SLICE_THICKNESS_MM)
    clean_v = Volume(clean.values, spacing)
    dirty_v = Volume(dirty.values, spacing)
    empty = np.zeros(clean.values.shape, dtype=bool)
    log.info("simulating metal-free reference")
    ref = physics.simulate_artifact(clean_v, empty, cfg)
    log.info("simulating metal artifacts")
    sim = physics.simulate_artifact(dirty_v, metal, cfg)
    geom = cfg.resolved_geometry(clean.values.shape, clean.pixel_spacing)
    mu_w = float(cfg.resolved_materials().water.mu(cfg.e0))
    log.info("running NMAR and LI-MAR")
    corrected = nmar(sim, geom, mcfg, mu_water=mu_w)
    li = nmar(sim, geom, mcfg, mu_water=mu_w, method="li")

    vols = {"phantom": clean_v, "reference": ref, "simulated": sim, "nmar": corrected, "li_mar": li}
    outputs = [io.write_volume(v, out / f"{k}.mhd") for k, v in vols.items()]
    outputs.append(io.write_volume(Volume(metal.astype(np.float32), spacing, Unit.LABEL),
                                   out / "metal_mask.mhd"))
    outputs.append(io.write_volume(Volume(roi.astype(np.float32), spacing, Unit.LABEL),
                                   out / "soft_roi.mhd"))

    nonmetal = ~(metal | segment_metal(sim.values[0], mcfg.metal_threshold))
    bone_truth = (clean.values >= PIPELINE_BONE_HU) & ~metal
    rows = []
    for name in ("reference", "simulated", "nmar", "li_mar"):
        img = vols[name].values[0]
        bone = (img >= PIPELINE_BONE_HU) & nonmetal
        try:
            bone_dice = metrics.dice(bone, bone_truth)
            bone_asd = metrics.asd(bone, bone_truth, (clean.pixel_spacing,) * 2)
        except metrics.MetricError as exc:
            log.warning("%s: bone scores undefined (%s)", name, exc)
            bone_dice = bone_asd = float("nan")
        rows.append({
            "image": name,
            "rmse_nonmetal_hu": metrics.rmse_region(img, ref.values[0], nonmetal),
            "soft_roi_std_hu": metrics.region_std(img, roi),
            "bone_dice": bone_dice,
            "bone_asd_mm": bone_asd,
        })
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    outputs.append(out / "metrics.csv")
    nm = rows[2]
    d, a = (None if np.isnan(v) else v for v in (nm["bone_dice"], nm["bone_asd_mm"]))
    report = metrics.MetricsReport(dice=d, asd_mm=a, streak_std_hu=nm["soft_roi_std_hu"],
                                   per_label=[metrics.LabelScore(1, d, a)])
    outputs.append(io.write_json(report.to_dict(), out / "report.json"))

    panels = {k: vols[k].values[0] for k in ("phantom", "simulated", "nmar", "li_mar")}
    outputs.append(plotting.comparison_panel(panels, out / "figures" / "comparison.png", roi=roi))
    row = int(np.argmax(metal.any(axis=1))) + int(metal.any(axis=1).sum() // 2)
    outputs.append(plotting.profile_plot(panels, row, out / "figures" / "profile.png",
                                         clean.pixel_spacing))
    outputs.append(plotting.metric_bars(rows, "soft_roi_std_hu", out / "figures" / "roi_std.png",
                                        "soft-tissue ROI std [HU]"))
    outputs.append(plotting.metric_bars(rows, "rmse_nonmetal_hu", out / "figures" / "rmse.png",
                                        "RMSE vs reference [HU]"))
    for k in ("simulated", "nmar", "li_mar"):
        outputs.append(io.export_slice_png(vols[k], 0, out / "png" / f"{k}.png"))
    config = {"simulation": describe_simulation(cfg, sources), "mar": describe_mar(mcfg),
              "size": args.size}
    _write_manifest(args, config, {"config": args.config}, outputs, out, seed=int(cfg.seed))
    for r in rows:
        log.info("%-10s rmse %.2f HU  roi std %.2f HU  bone dice %.4f", r["image"],
                 r["rmse_nonmetal_hu"], r["soft_roi_std_hu"], r["bone_dice"])
    return 0


def cmd_replay(args):
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    argv = manifest.get("argv")
    if not argv:
        raise CliError(f"{args.manifest}: no argv recorded")
    return main(argv)


# ------------------------------------------------------------------ parser

def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _seed(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _sim_flags(p):
    p.add_argument("--config", help="JSON or TOML config document")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--e0", type=float, help="equivalent monochromatic energy [keV]")
    p.add_argument("--n0", type=float, help="incident photons per ray")
    p.add_argument("--views", type=_positive_int, help="number of views over [0, pi)")
    p.add_argument("--spectrum", help="spectrum CSV (energy_kev,weight)")
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--no-bhc", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="marforge", description="Metal artifact simulation and NMAR.")
    parser.add_argument("--version", action="version", version=f"marforge {__version__}")
    parser.add_argument("--threads", type=_positive_int,
                        help="worker threads (default: $MARFORGE_THREADS or CPU count)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="write a phantom volume and its masks")
    p.add_argument("--kind", choices=["shepp-logan", "hip", "water"], default="hip")
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--metal", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--slices", type=_positive_int, default=1)
    p.add_argument("--spacing", type=float, default=1.0, help="pixel spacing for shepp-logan [mm]")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="simulate metal artifacts in an HU volume")
    p.add_argument("--input", required=True)
    p.add_argument("--metal", help="metal mask volume (non-zero = metal)")
    p.add_argument("--out", required=True, help="output .mhd")
    p.add_argument("--dump-sinograms", metavar="DIR")
    _sim_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("nmar", help="normalized metal artifact reduction")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="output .mhd")
    p.add_argument("--config")
    p.add_argument("--method", choices=["nmar", "li"], default="nmar")
    p.add_argument("--metal-threshold", type=float)
    p.add_argument("--air-threshold", type=float)
    p.add_argument("--bone-threshold", type=float)
    p.add_argument("--e0", type=float)
    p.add_argument("--views", type=_positive_int)
    p.add_argument("--dump-prior", metavar="MHD")
    p.add_argument("--dump-trace", metavar="DIR")
    p.set_defaults(func=cmd_nmar)

    p = sub.add_parser("evaluate", help="Dice / ASD / ROI statistics as JSON")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--remove-islands", action="store_true")
    p.add_argument("--island-fraction", type=float, default=0.05)
    p.add_argument("--image", help="HU volume for ROI statistics")
    p.add_argument("--roi", help="ROI mask for streak std")
    p.add_argument("--center-roi")
    p.add_argument("--annulus-roi")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="export windowed axial slices as PNG")
    p.add_argument("--input", required=True)
    p.add_argument("--slice", type=int, action="append")
    p.add_argument("--window", type=_parse_window, default=io.RenderConfig(),
                   help="low,high in HU (default -150,350; write --window=-100,200)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("pipeline", help="phantom -> simulate -> nmar -> evaluate -> figures")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--out", required=True)
    _sim_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads:
        set_threads(args.threads)
    try:
        return args.func(args)
    except (ValidationError, CliError, io.FormatError, metrics.MetricError, FileNotFoundError,
            IndexError, ValueError) as exc:
        print(f"marforge {args.command}: error: {exc}", file=sys.stderr)
        return 2
    finally:
        if args.threads:
            set_threads(None)


if __name__ == "__main__":
    sys.exit(main())
