"""Command-line surface: profile, simulate, analyze.

Each invocation writes into its own run directory: a snapshot of the
resolved configuration, the delimited data files, rendered figures of the
same content, and a manifest with SHA-256 hashes of everything written.
Exit codes: 0 success, 2 configuration or usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analyze as an
from . import config as cfgmod
from . import figures, metrics
from . import profiler as prof
from . import simulator as sim
from .core import load_scan, save_scan, subseed
from .config import ConfigError

log = logging.getLogger("iongrid")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _run_dir(base: str, name: str) -> Path:
    root = Path(base)
    root.mkdir(parents=True, exist_ok=True)
    k = 0
    while True:
        candidate = root / (name if k == 0 else f"{name}-{k}")
        if not candidate.exists():
            candidate.mkdir()
            return candidate
        k += 1


def _write_manifest(run_dir: Path) -> None:
    entries = {}
    for p in sorted(run_dir.iterdir()):
        if p.name == "manifest.json" or p.is_dir():
            continue
        entries[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    with open(run_dir / "manifest.json", "w") as fh:
        json.dump({"files": entries}, fh, indent=2)


def _finish(run_dir: Path, config: dict) -> None:
    cfgmod.snapshot(config, run_dir / "config.ini")
    _write_manifest(run_dir)
    log.info("run directory: %s", run_dir)


# ---------------------------------------------------------------------------
# profile
# ---------------------------------------------------------------------------

def cmd_profile(config: dict) -> int:
    p = config["profile"]
    seed = config["run"]["seed"]
    run_dir = _run_dir(config["run"]["out"], "profile")

    session_cfg = prof.SessionConfig(
        grid_shape=(p["grid_nx"], p["grid_nsigma"], p["grid_na"]),
        max_candidates=p["max_candidates"],
    )
    truth = prof.BeamParams(x0=p["x0"], sigma=p["sigma"], a=p["a"])
    result = prof.run_session(truth, p["events"], session_cfg, seed=seed)

    prof.write_session_csv(result, run_dir / "events.csv")
    hist = prof.edge_histogram(result, p["bin_width"])
    prof.write_edge_histogram_csv(hist, run_dir / "edge_histogram.csv")
    est = result.estimate
    with open(run_dir / "posterior.json", "w") as fh:
        json.dump({
            "x0_mean_nm": est.x0_mean, "x0_std_nm": est.x0_std,
            "sigma_mean_nm": est.sigma_mean, "sigma_std_nm": est.sigma_std,
            "a_mean": est.a_mean, "a_std": est.a_std,
            "n_events": len(result.events),
        }, fh, indent=2)
    figures.save_profile_figure(result, run_dir / "profile.png", p["bin_width"])

    log.info("beam sigma: %.2f +/- %.2f nm after %d events",
             est.sigma_mean, est.sigma_std, len(result.events))
    _finish(run_dir, config)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(config: dict) -> int:
    s = config["simulate"]
    seed = config["run"]["seed"]
    run_dir = _run_dir(config["run"]["out"], "simulate")

    plan = sim.build_plan(s["area"])
    fov = plan.field_of_view()
    geom = sim.ScanGeometry.for_fov(fov, pixel_size=s["pixel_size"],
                                    background_rate=s["background"])

    natives = sim.sample_native_background(
        fov, s["native_density"], s["depth_of_field"], seed=subseed(seed, 0))
    implanted = sim.implant(plan, s["beam_sigma"], s["straggle"],
                            seed=subseed(seed, 1), fov=fov)

    before = sim.render_scan(natives, geom, s["brightness"],
                             seed=subseed(seed, 2), noiseless=s["noiseless"])

    first = sim.AnnealModel(activation_yield=s["activation_yield"],
                            migration_loss=s["migration_loss"],
                            migration_sigma=s["migration_sigma"])
    annealed = sim.anneal(natives.merged_with(implanted), first,
                          seed=subseed(seed, 3))
    after = sim.render_scan(annealed, geom, s["brightness"],
                            seed=subseed(seed, 4), noiseless=s["noiseless"])

    second = sim.AnnealModel(activation_yield=s["second_anneal_yield"],
                             migration_loss=s["second_anneal_loss"],
                             migration_sigma=s["migration_sigma"])
    reannealed = sim.anneal(annealed, second, seed=subseed(seed, 5))
    after_second = sim.render_scan(reannealed, geom, s["brightness"],
                                   seed=subseed(seed, 6), noiseless=s["noiseless"])

    sim.write_emitters_csv(reannealed, run_dir / "emitters.csv")
    for name, image in (("scan_before", before), ("scan_after_implant", after),
                        ("scan_after_second_anneal", after_second)):
        save_scan(image, run_dir / f"{name}.scan")
        figures.save_scan_figure(image, run_dir / f"{name}.png", name)

    log.info("%d planned ions, %d active after anneal", plan.total_ions(),
             sum(1 for e in annealed.emitters if e.active and e.spot_id is not None))
    _finish(run_dir, config)
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def cmd_analyze(config: dict, before_path: str, after_path: str) -> int:
    a = config["analyze"]
    run_dir = _run_dir(config["run"]["out"], "analyze")

    before = load_scan(before_path)
    after = load_scan(after_path)
    diff = an.subtract_images(after, before)

    plan = sim.build_plan(a["area"])
    centers = plan.spot_centers()
    unit = a["unit"]
    psf_c = a["psf_c"]

    quants = []
    for sid, center in enumerate(centers, start=1):
        net = an.spot_net_counts(diff, an.default_aperture(center, psf_c))
        quants.append(an.quantify_spot(net, unit, spot_id=sid))
    an.write_quant_csv(quants, run_dir / "quantification.csv")
    figures.save_quant_figure(quants, run_dir / "quantification.png")
    log.info("rounded ion counts: %s (sum %d)",
             [q.ions_rounded for q in quants], sum(q.ions_rounded for q in quants))

    exclusions = cfgmod.parse_exclusions(a["exclusions"])
    if a["fit_positions"]:
        fitted_centers, per_spot = _fit_spot_positions(diff, centers, quants, psf_c)
    else:
        fitted_centers, per_spot = [], []

    usable = [i for i, c in enumerate(fitted_centers) if c is not None]
    if len(usable) >= 3:
        spot_ids = [i + 1 for i in usable]
        pts = np.array([fitted_centers[i] for i in usable])
        grid = metrics.register_grid(pts, a["pitch"])
        acc = metrics.accuracy_sigma(pts, grid, exclusions, ids=spot_ids)
        metrics.write_residuals_csv(grid, run_dir / "accuracy_residuals.csv",
                                    ids=spot_ids)
        metrics.write_summary_json(acc, run_dir / "accuracy.json", "accuracy")
        try:
            prec = metrics.precision_sigma(
                [per_spot[i] for i in usable], exclusions, ids=spot_ids)
            metrics.write_summary_json(prec, run_dir / "precision.json", "precision")
            disp = np.vstack([
                np.asarray(per_spot[i]) - np.asarray(per_spot[i]).mean(axis=0)
                for i in usable
                if (i + 1) not in exclusions and len(per_spot[i]) >= 2
            ])
        except ValueError:
            prec, disp = None, np.empty((0, 2))
        figures.save_residual_figure(grid.residuals, disp,
                                     run_dir / "residuals.png")
        log.info("accuracy sigma %.1f nm%s", acc.sigma,
                 f", precision sigma {prec.sigma:.1f} nm" if prec else "")

    _finish(run_dir, config)
    return EXIT_OK


def _fit_spot_positions(diff, centers, quants, psf_c):
    """Multi-Gaussian fit of each occupied spot; returns per-spot fitted
    centroids and position lists."""
    fitted_centers = []
    per_spot = []
    half_px = int(round(4 * psf_c / diff.pixel_size))
    for center, quant in zip(centers, quants):
        n = quant.ions_rounded
        if n < 1:
            fitted_centers.append(None)
            per_spot.append([])
            continue
        col = int(round((center[0] - diff.origin[0]) / diff.pixel_size))
        row = int(round((center[1] - diff.origin[1]) / diff.pixel_size))
        roi = (max(0, row - half_px), min(diff.height, row + half_px + 1),
               max(0, col - half_px), min(diff.width, col + half_px + 1))
        try:
            fit = an.fit_multi_gaussian(diff, roi, n, fixed_c=psf_c)
        except Exception as exc:   # keep the pipeline alive per spot
            log.warning("spot at %s: fit failed (%s)", center, exc)
            fitted_centers.append(None)
            per_spot.append([])
            continue
        positions = [(x, y) for _, x, y in fit.components]
        per_spot.append(positions)
        fitted_centers.append(tuple(np.mean(positions, axis=0)))
    return fitted_centers, per_spot


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _apply_overrides(config: dict, args: argparse.Namespace, mapping: dict) -> None:
    for flag, (section, key) in mapping.items():
        value = getattr(args, flag, None)
        if value is not None:
            config[section][key] = value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iongrid",
        description="Single-ion implantation simulator and analysis toolkit",
    )
    parser.add_argument("--config", help="INI configuration file")
    parser.add_argument("--out", help="output directory root (default: runs)")
    parser.add_argument("--seed", type=int, help="global random seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="run an adaptive knife-edge session")
    p.add_argument("--sigma", type=float, help="true beam waist (nm)")
    p.add_argument("--x0", type=float, help="true beam center (nm)")
    p.add_argument("--a", type=float, help="detector efficiency")
    p.add_argument("--events", type=int, help="number of edge events")

    s = sub.add_parser("simulate", help="simulate implantation and scans")
    s.add_argument("--area", choices=["A", "B"], help="pattern to implant")
    s.add_argument("--activation-yield", dest="activation_yield", type=float,
                   help="anneal activation yield")
    s.add_argument("--beam-sigma", dest="beam_sigma", type=float,
                   help="beam waist (nm)")
    s.add_argument("--brightness", type=float,
                   help="integrated single-ion counts")
    s.add_argument("--no-noise", action="store_true",
                   help="render noiseless expected images")

    z = sub.add_parser("analyze", help="quantify a before/after scan pair")
    z.add_argument("before", help="pre-implantation scan (.scan)")
    z.add_argument("after", help="post-implantation scan (.scan)")
    z.add_argument("--unit", type=float, help="single-ion calibration (counts)")
    z.add_argument("--area", choices=["A", "B"],
                   help="plan providing nominal spot centers")
    z.add_argument("--exclusions", help="spot ids excluded from statistics")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        config = cfgmod.load_config(args.config)
        if args.out is not None:
            config["run"]["out"] = args.out
        if args.seed is not None:
            config["run"]["seed"] = args.seed
        if args.command == "profile":
            _apply_overrides(config, args, {
                "sigma": ("profile", "sigma"), "x0": ("profile", "x0"),
                "a": ("profile", "a"), "events": ("profile", "events"),
            })
        elif args.command == "simulate":
            _apply_overrides(config, args, {
                "area": ("simulate", "area"),
                "activation_yield": ("simulate", "activation_yield"),
                "beam_sigma": ("simulate", "beam_sigma"),
                "brightness": ("simulate", "brightness"),
            })
            if args.no_noise:
                config["simulate"]["noiseless"] = True
        elif args.command == "analyze":
            _apply_overrides(config, args, {
                "unit": ("analyze", "unit"), "area": ("analyze", "area"),
                "exclusions": ("analyze", "exclusions"),
            })
        cfgmod.validate(config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "profile":
            return cmd_profile(config)
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "analyze":
            return cmd_analyze(config, args.before, args.after)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.error("run failed: %s", exc)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
