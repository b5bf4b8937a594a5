"""Batch front end: simulate / sweep / fit / calibrate / render.

Every run writes a manifest first (the fully expanded config plus comment
lines describing the invocation); feeding a manifest back as the config
reproduces the outputs byte for byte. The wall clock is never consulted,
so reruns are bit-stable.
"""

import argparse
import csv
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from . import metrics, zener
from .engine import EngineParams
from .lattice import PARTICLE, Lattice, load_text, save_text
from .rng import derive_seed
from .seeding import ParticleSpec, PlacementError, SeedConfig, voronoi_init, \
    place_particles

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PLACEMENT = 2


def orientation_color(orientation):
    """Deterministic RGB for a grain orientation; never black (particles own black)."""
    h = derive_seed(0x5EED, int(orientation))
    return (48 + (h & 0xFF) % 200,
            48 + ((h >> 8) & 0xFF) % 200,
            48 + ((h >> 16) & 0xFF) % 200)


def write_ppm(lat, path):
    """Binary P6 raster, one pixel per cell; stable colors across runs."""
    img = np.zeros((lat.height, lat.width, 3), dtype=np.uint8)
    for orient in lat.orientations():
        img[lat.grid == orient] = orientation_color(int(orient))
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (lat.width, lat.height))
        fh.write(img.tobytes())


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _manifest(cfg, command, extra=()):
    lines = ["# grainca manifest", "# command: %s" % command]
    for item in extra:
        lines.append("# %s" % item)
    return "\n".join(lines) + "\n" + cfgmod.serialize(cfg)


def _load(args):
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise cfgmod.ConfigError(["--set %r: expected section.key=value" % item])
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return cfgmod.load_config(args.config, overrides)


def _outdir(cfg):
    os.makedirs(cfg.outputs_directory, exist_ok=True)
    return cfg.outputs_directory


def cmd_simulate(args):
    cfg = _load(args)
    out = _outdir(cfg)
    formats = cfg.format_set()

    lat = voronoi_init(SeedConfig(cfg.grid_width, cfg.grid_height,
                                  cfg.grid_cell_size_um,
                                  cfg.n_grains_or_saturated(),
                                  cfg.seeding_rng_seed))
    achieved = 0.0
    if cfg.particles_volume_fraction > 0:
        spec = ParticleSpec(cfg.particles_radius_um, cfg.particles_volume_fraction)
        try:
            lat = place_particles(lat, spec, cfg.particles_rng_seed)
        except PlacementError as exc:
            print("placement failed: %s (achieved fraction %.6f)"
                  % (exc, exc.achieved_fraction), file=sys.stderr)
            return EXIT_PLACEMENT
        achieved = lat.particle_count() / lat.n_cells

    _write(os.path.join(out, "manifest.txt"),
           _manifest(cfg, "simulate",
                     ["achieved_particle_fraction: %s" % repr(achieved)]))

    params = EngineParams(c=cfg.engine_c, Q=cfg.engine_q, T=cfg.engine_temperature,
                          J_energy=cfg.engine_j_energy, rng_seed=cfg.engine_rng_seed)
    from .engine import run
    traj = run(lat, params, cfg.schedule_n_cas, cfg.schedule_record_every)
    series = metrics.record_kinetics(traj)
    final = traj[-1][1]
    stats = metrics.grain_stats(metrics.label_grains(final), final)

    if "csv" in formats:
        _write(os.path.join(out, "kinetics.csv"), metrics.kinetics_csv(series))
        _write(os.path.join(out, "histogram.csv"), metrics.histogram_csv(stats))
    if "lattice" in formats:
        save_text(final, os.path.join(out, "final_lattice.txt"))
    if "ppm" in formats:
        for cas, snap in traj:
            write_ppm(snap, os.path.join(out, "lattice_%06d.ppm" % cas))

    print("final mean grain size: %.4f um" % stats.mean_diameter_um)
    print("final grain count: %d" % stats.grain_count)
    print("achieved particle fraction: %.6f" % achieved)
    return EXIT_OK


def _sweep_base(cfg, base_seed):
    return zener.SweepBase(
        width=cfg.grid_width, height=cfg.grid_height,
        cell_size_um=cfg.grid_cell_size_um, n_grains=cfg.n_grains_or_saturated(),
        n_cas=cfg.schedule_n_cas, record_every=cfg.schedule_record_every,
        base_seed=base_seed, c=cfg.engine_c, Q=cfg.engine_q,
        T=cfg.engine_temperature, J_energy=cfg.engine_j_energy)


def cmd_sweep(args):
    cfg = _load(args)
    out = _outdir(cfg)
    _write(os.path.join(out, "manifest.txt"),
           _manifest(cfg, "sweep", ["workers: %d" % cfg.sweep_workers]))
    result = zener.sweep(list(cfg.sweep_radii_um), list(cfg.sweep_fractions),
                         _sweep_base(cfg, cfg.sweep_base_seed),
                         cfg.sweep_seeds, workers=cfg.sweep_workers)
    _write(os.path.join(out, "sweep.csv"), zener.sweep_csv(result))
    for r_um, f, mean, sd, n_ok in result.aggregate():
        print("r=%g um f=%g: d_lim = %.4f +- %.4f um (%d/%d seeds)"
              % (r_um, f, mean, sd, n_ok, cfg.sweep_seeds))
    return EXIT_OK


def _read_sweep_csv(path):
    """Parse a sweep table; malformed cells name their row and column."""
    header = ["r_um", "f", "seed", "d_lim_um"]
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != header:
            raise ValueError("%s: bad header %r, expected %r" % (path, got, header))
        for ln_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ValueError("%s: row %d has %d columns, expected 4"
                                 % (path, ln_no, len(row)))
            parsed = []
            for col_name, parse, text in zip(header, (float, float, int, float), row):
                try:
                    parsed.append(parse(text))
                except ValueError:
                    raise ValueError("%s: row %d, column %s: bad value %r"
                                     % (path, ln_no, col_name, text)) from None
            rows.append(parsed)
    return rows


def cmd_fit(args):
    cfg = _load(args)
    out = _outdir(cfg)
    rows = _read_sweep_csv(cfg.fit_input_csv)
    _write(os.path.join(out, "manifest.txt"),
           _manifest(cfg, "fit", ["input: %s" % cfg.fit_input_csv]))

    radii = []
    for r_um, _f, _s, _d in rows:
        if r_um not in radii:
            radii.append(r_um)
    fits = []
    for r_um in radii:
        by_f = {}
        for row_r, f, _seed, d in rows:
            if row_r == r_um and not math.isnan(d):
                by_f.setdefault(f, []).append(d)
        pts = [(f, sum(v) / len(v)) for f, v in by_f.items()]
        fits.append(zener.fit_zener(pts, r_um))
    _write(os.path.join(out, "fit.csv"), zener.fit_csv(fits))
    for f in fits:
        print("r=%g um: k=%.6g n=%.6g (rms log residual %.3g)"
              % (f.radius_um, f.k_fit, f.n_fit, f.rms_log_residual))
    return EXIT_OK


def cmd_calibrate(args):
    cfg = _load(args)
    out = _outdir(cfg)
    _write(os.path.join(out, "manifest.txt"),
           _manifest(cfg, "calibrate", ["seeds: %d" % cfg.calibrate_seeds]))
    table = zener.default_table()
    base = _sweep_base(cfg, cfg.calibrate_base_seed)
    budget = cfg.calibrate_cas_per_minute_budget

    runs = [zener.staged_run(base, table, budget, seed_salt=s)
            for s in range(cfg.calibrate_seeds)]
    mean_series = metrics.KineticsSeries([
        metrics.KineticsPoint(
            runs[0].points[i].cas,
            float(np.mean([r.points[i].mean_diameter_um for r in runs])),
            int(round(np.mean([r.points[i].grain_count for r in runs]))))
        for i in range(len(runs[0]))])
    cal = zener.calibrate_time(mean_series, table)
    _write(os.path.join(out, "calibration.csv"), zener.calibration_csv(cal))
    print("cas_per_minute: %.6g" % cal.cas_per_minute)
    print("max relative error: %.4f" % cal.max_rel_error())
    return EXIT_OK


def cmd_render(args):
    lat = load_text(args.lattice)
    write_ppm(lat, args.output)
    print("wrote %s (%dx%d)" % (args.output, lat.width, lat.height))
    return EXIT_OK


def _add_config_args(sub):
    sub.add_argument("-c", "--config", required=True, help="config file path")
    sub.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                     help="override a config entry (repeatable; wins over the file)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="grainca",
        description="2D cellular-automata grain growth with particle pinning")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("simulate", cmd_simulate), ("sweep", cmd_sweep),
                     ("fit", cmd_fit), ("calibrate", cmd_calibrate)):
        sub = subs.add_parser(name)
        _add_config_args(sub)
        sub.set_defaults(func=fn)
    render = subs.add_parser("render")
    render.add_argument("lattice", help="lattice text file")
    render.add_argument("output", help="output PPM path")
    render.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, zener.CalibrationError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
