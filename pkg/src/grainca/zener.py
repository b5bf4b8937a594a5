"""Parameter sweeps over particle radius/fraction, limiting grain sizes,
power-law (Zener) fits, and calibration of CAS against holding-time data.

The embedded experimental table carries the measured primary-phase radius,
volume fraction, and mean grain size per holding time; staged runs replay
those (r, f) stages so a single CAS-per-minute scalar can be fitted.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .engine import (DEFAULT_Q_J_PER_MOL, DEFAULT_TEMPERATURE_K, EngineParams,
                     run)
from .lattice import PARTICLE, Lattice, neighbor_table
from .metrics import KineticsPoint, KineticsSeries, record_kinetics
from .rng import derive_seed
from .seeding import (ParticleSpec, PlacementError, SeedConfig, voronoi_init,
                      place_particles)


class FitError(ValueError):
    """Zener fit is underdetermined or fed invalid points."""


class CalibrationError(RuntimeError):
    """Simulated series cannot be matched against the experimental times."""


@dataclass
class ExperimentalRow:
    holding_time_min: float
    gamma_radius_um: float | None
    gamma_fraction: float | None
    mean_grain_size_um: float | None


@dataclass
class ExperimentalTable:
    rows: list

    def sized_rows(self):
        return [r for r in self.rows if r.mean_grain_size_um is not None]

    def staged_rows(self):
        return [r for r in self.rows
                if r.gamma_radius_um is not None and r.gamma_fraction is not None]


def default_table():
    """Measured holding-time data; the 45-min sample has no reported values."""
    return ExperimentalTable(rows=[
        ExperimentalRow(30.0, 1.4, 0.15, 7.6),
        ExperimentalRow(45.0, None, None, None),
        ExperimentalRow(60.0, 1.1, 0.092, 11.2),
        ExperimentalRow(75.0, 1.0, 0.052, 22.6),
        ExperimentalRow(100.0, 0.85, 0.03, 31.0),
    ])


@dataclass
class ZenerFit:
    radius_um: float
    points: list            # (fraction, d_lim_um)
    k_fit: float
    n_fit: float
    rms_log_residual: float


@dataclass
class TimeCalibration:
    cas_per_minute: float
    anchor: tuple            # (holding_time_min, mean_grain_size_um) best matched
    errors: list             # (time_min, sim_um, exp_um, rel_error)

    def max_rel_error(self):
        return max(e[3] for e in self.errors)


@dataclass
class SweepBase:
    """Shared configuration for every cell of an (r, f) sweep."""

    width: int = 300
    height: int = 300
    cell_size_um: float = 0.4
    n_grains: int | None = None  # None: one grain per cell (saturated start)
    n_cas: int = 100_000
    record_every: int = 1000
    base_seed: int = 20260810
    c: float = 1.0
    Q: float = DEFAULT_Q_J_PER_MOL
    T: float = DEFAULT_TEMPERATURE_K
    J_energy: float = 1.0

    def engine_params(self, rng_seed):
        return EngineParams(c=self.c, Q=self.Q, T=self.T,
                            J_energy=self.J_energy, rng_seed=rng_seed)


@dataclass
class SweepCell:
    r_um: float
    fraction: float
    seed_index: int
    d_lim_um: float          # NaN when the cell failed
    error: str | None
    series: KineticsSeries | None


@dataclass
class SweepResult:
    base: SweepBase
    cells: list

    def cell(self, r_um, fraction, seed_index):
        for c in self.cells:
            if (c.r_um == r_um and c.fraction == fraction
                    and c.seed_index == seed_index):
                return c
        raise KeyError((r_um, fraction, seed_index))

    def aggregate(self):
        """Rows of (r_um, fraction, mean d_lim, stddev, n_ok), sweep order."""
        out = []
        seen = []
        for c in self.cells:
            key = (c.r_um, c.fraction)
            if key not in seen:
                seen.append(key)
        for r_um, f in seen:
            vals = np.array([c.d_lim_um for c in self.cells
                             if c.r_um == r_um and c.fraction == f
                             and not math.isnan(c.d_lim_um)])
            if vals.size:
                out.append((r_um, f, float(vals.mean()),
                            float(vals.std(ddof=0)), int(vals.size)))
            else:
                out.append((r_um, f, float("nan"), float("nan"), 0))
        return out


def limiting_size(series, window):
    """Plateau estimate: mean diameter over the final `window` entries."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(series) < window:
        raise ValueError("series of length %d shorter than window %d"
                         % (len(series), window))
    return float(series.mean_diameters()[-window:].mean())


def default_window(series_len):
    # final 10% of the recorded entries, at least one
    return max(1, round(0.1 * series_len))


def fit_zener(points, radius_um):
    """Least squares in log space for d_lim/r = k / f^n.

    log(d_lim/r) = log k - n log f is linear in log f, so the fit is exact
    for the model family and convex; returns k, n and the RMS log residual.
    """
    if radius_um <= 0:
        raise ValueError("radius_um must be positive")
    pts = [(float(f), float(d)) for f, d in points]
    for f, d in pts:
        if not 0.0 < f < 1.0:
            raise ValueError("fractions must lie in (0, 1), got %g" % f)
        if d <= 0:
            raise ValueError("d_lim must be positive, got %g" % d)
    if len({f for f, _ in pts}) < 2:
        raise FitError("need at least 2 distinct fractions to fit")
    x = np.log(np.array([f for f, _ in pts]))
    y = np.log(np.array([d for _, d in pts]) / radius_um)
    a = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    return ZenerFit(radius_um, pts, float(math.exp(coef[0])), float(-coef[1]),
                    float(math.sqrt(np.mean(resid ** 2))))


def _fbits(x):
    return int(np.float64(x).view(np.uint64))


def _cell_seeds(base_seed, r_um, fraction, seed_index):
    key = (_fbits(r_um), _fbits(fraction), seed_index)
    return (derive_seed(base_seed, 1, *key),
            derive_seed(base_seed, 2, *key),
            derive_seed(base_seed, 3, *key))


def run_sweep_cell(base, r_um, fraction, seed_index):
    """Seed, place particles, run the CAS budget, extract the limiting size."""
    voro_seed, place_seed, engine_seed = _cell_seeds(
        base.base_seed, r_um, fraction, seed_index)
    lat = voronoi_init(SeedConfig(base.width, base.height, base.cell_size_um,
                                  base.n_grains, voro_seed))
    try:
        lat = place_particles(lat, ParticleSpec(r_um, fraction), place_seed)
    except (PlacementError, ValueError) as exc:
        return SweepCell(r_um, fraction, seed_index, float("nan"), str(exc), None)
    traj = run(lat, base.engine_params(engine_seed), base.n_cas, base.record_every)
    series = record_kinetics(traj)
    d_lim = limiting_size(series, default_window(len(series)))
    return SweepCell(r_um, fraction, seed_index, d_lim, None, series)


def _cell_task(args):
    base, r_um, fraction, seed_index = args
    return run_sweep_cell(base, r_um, fraction, seed_index)


def sweep(radii_um, fractions, base, seeds, workers=1):
    """Full (r, f, seed) grid; placement failures are recorded per cell.

    Cells are independent tasks; with workers > 1 they are farmed to a
    process pool, and the result ordering is by (r, f, seed) regardless of
    completion order, so the table is worker-count invariant.
    """
    if not radii_um or not fractions:
        raise ValueError("radii and fractions must be non-empty")
    if seeds < 1:
        raise ValueError("seeds must be >= 1")
    tasks = [(base, r, f, s)
             for r in radii_um for f in fractions for s in range(seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_cell_task, tasks))
    else:
        cells = [_cell_task(t) for t in tasks]
    return SweepResult(base, cells)


def fit_sweep(result):
    """One Zener fit per radius from the seed-averaged limiting sizes."""
    fits = []
    radii = []
    for c in result.cells:
        if c.r_um not in radii:
            radii.append(c.r_um)
    agg = result.aggregate()
    for r in radii:
        pts = [(f, mean) for (r_um, f, mean, _sd, n_ok) in agg
               if r_um == r and n_ok > 0]
        fits.append(fit_zener(pts, r))
    return fits


@njit(cache=True)
def _heal_kernel(flat, nbrs):
    # synchronous passes: each remaining particle cell with grain contact
    # takes the majority orientation of its grain neighbors, ties to the
    # lowest orientation value; repeats until no particle cells remain
    n = flat.size
    fill_idx = np.empty(n, np.int64)
    fill_val = np.empty(n, np.int32)
    vals = np.empty(8, np.int32)
    while True:
        remaining = 0
        m_fill = 0
        for i in range(n):
            if flat[i] != PARTICLE:
                continue
            remaining += 1
            nv = 0
            for k in range(8):
                v = flat[nbrs[i, k]]
                if v != PARTICLE:
                    vals[nv] = v
                    nv += 1
            if nv == 0:
                continue
            best = 0
            best_count = 0
            for a in range(nv):
                cnt = 0
                for b in range(nv):
                    if vals[b] == vals[a]:
                        cnt += 1
                if cnt > best_count or (cnt == best_count and
                                        (best == 0 or vals[a] < best)):
                    best = vals[a]
                    best_count = cnt
            fill_idx[m_fill] = i
            fill_val[m_fill] = best
            m_fill += 1
        if remaining == 0:
            return
        for t in range(m_fill):
            flat[fill_idx[t]] = fill_val[t]
        if m_fill == 0:
            return  # isolated particle-only lattice cannot be healed


def dissolve_particles(lat):
    """Replace particle cells by the majority neighbor orientation.

    Models full dissolution of the second phase between holding stages;
    multi-pass so disk interiors fill from the outside in. Deterministic.
    """
    flat = lat.grid.reshape(-1).copy()
    _heal_kernel(flat, neighbor_table(lat.height, lat.width))
    if (flat == PARTICLE).any():
        raise ValueError("lattice has no grain cells to heal from")
    return Lattice(flat.reshape(lat.grid.shape), lat.cell_size_um)


def staged_run(base, table, cas_per_minute, seed_salt=0):
    """Piecewise run over the experimental stages of (r, f).

    The timeline is split at the holding times carrying measured radius
    and fraction; each segment re-places particles at that stage's values
    (previous particles dissolve into the surrounding grains) and advances
    (stage minutes) * cas_per_minute CAS. Returns the merged kinetics.
    """
    stages = table.staged_rows()
    if not stages:
        raise CalibrationError("experimental table has no staged (r, f) rows")
    voro_seed = derive_seed(base.base_seed, 4, seed_salt)
    lat = voronoi_init(SeedConfig(base.width, base.height, base.cell_size_um,
                                  base.n_grains, voro_seed))
    points = []
    prev_min = 0.0
    cas_offset = 0
    for si, row in enumerate(stages):
        if si > 0:
            lat = dissolve_particles(lat)
        spec = ParticleSpec(row.gamma_radius_um, row.gamma_fraction)
        lat = place_particles(lat, spec,
                              derive_seed(base.base_seed, 5, seed_salt, si))
        seg_cas = int(round((row.holding_time_min - prev_min) * cas_per_minute))
        params = base.engine_params(derive_seed(base.base_seed, 6, seed_salt, si))
        traj = run(lat, params, seg_cas, base.record_every)
        seg = record_kinetics(traj)
        for p in seg.points:
            if cas_offset + p.cas == 0 or p.cas > 0:
                points.append(KineticsPoint(cas_offset + p.cas,
                                            p.mean_diameter_um, p.grain_count))
        cas_offset += seg_cas
        prev_min = row.holding_time_min
        lat = traj[-1][1]
    return KineticsSeries(points)


def _max_rel_error(cas, diam, times, sizes, cpm):
    sim = np.interp(np.asarray(times) * cpm, cas, diam)
    return float(np.max(np.abs(sim - sizes) / sizes)), sim


def calibrate_time(sim_series, table):
    """Single CAS-per-minute scalar minimizing the worst relative error.

    Simulated mean size is linearly interpolated between recorded CAS
    points; candidate scalars combine a dense grid with the exact
    crossings where the interpolant meets each experimental size, then a
    local grid refinement around the best candidate.
    """
    rows = table.sized_rows()
    if not rows:
        raise CalibrationError("experimental table has no sized rows")
    if len(sim_series) < 2:
        raise CalibrationError("simulated series too short to interpolate")
    cas = sim_series.cas().astype(np.float64)
    diam = sim_series.mean_diameters()
    times = np.array([r.holding_time_min for r in rows])
    sizes = np.array([r.mean_grain_size_um for r in rows])
    max_cas = float(cas[-1])
    max_time = float(times.max())
    if max_cas <= 0:
        raise CalibrationError("simulated series does not advance past CAS 0")

    cpm_hi = max_cas / max_time
    candidates = list(np.linspace(cpm_hi / 4000.0, cpm_hi, 4000))
    # exact crossings of the piecewise-linear interpolant with each size
    for t, e in zip(times, sizes):
        for a in range(len(cas) - 1):
            d0, d1 = diam[a], diam[a + 1]
            if (d0 - e) * (d1 - e) > 0:
                continue
            if d0 == d1:
                cross = cas[a]
            else:
                cross = cas[a] + (e - d0) * (cas[a + 1] - cas[a]) / (d1 - d0)
            cpm = cross / t
            if 0.0 < cpm <= cpm_hi:
                candidates.append(float(cpm))

    def best_of(cands):
        top_cpm, top_err = None, math.inf
        for cpm in sorted(cands):
            err, _ = _max_rel_error(cas, diam, times, sizes, cpm)
            if err < top_err:
                top_cpm, top_err = cpm, err
        return top_cpm, top_err

    best_cpm, best_err = best_of(candidates)
    span = cpm_hi / 4000.0
    for _ in range(3):
        lo = max(best_cpm - span, cpm_hi / 1e9)
        grid = np.linspace(lo, min(best_cpm + span, cpm_hi), 201)
        cand_cpm, cand_err = best_of(list(grid))
        if cand_err < best_err:
            best_cpm, best_err = cand_cpm, cand_err
        span /= 50.0

    _, sim_at = _max_rel_error(cas, diam, times, sizes, best_cpm)
    errors = [(float(t), float(s), float(e), float(abs(s - e) / e))
              for t, s, e in zip(times, sim_at, sizes)]
    anchor_row = min(errors, key=lambda row: (row[3], row[0]))
    return TimeCalibration(float(best_cpm), (anchor_row[0], anchor_row[2]), errors)


def sweep_csv(result):
    """Sweep table CSV with the fixed header r_um,f,seed,d_lim_um."""
    lines = ["r_um,f,seed,d_lim_um"]
    for c in result.cells:
        lines.append("%s,%s,%d,%s" % (repr(float(c.r_um)), repr(float(c.fraction)),
                                      c.seed_index, repr(float(c.d_lim_um))))
    return "\n".join(lines) + "\n"


def fit_csv(fits):
    """Fit report CSV with the fixed header r_um,k,n,rms_log_residual."""
    lines = ["r_um,k,n,rms_log_residual"]
    for f in fits:
        lines.append("%s,%s,%s,%s" % (repr(float(f.radius_um)), repr(float(f.k_fit)),
                                      repr(float(f.n_fit)),
                                      repr(float(f.rms_log_residual))))
    return "\n".join(lines) + "\n"


def calibration_csv(cal):
    """Calibration report CSV with the fixed header time_min,sim_um,exp_um,rel_error."""
    lines = ["time_min,sim_um,exp_um,rel_error"]
    for t, s, e, rel in cal.errors:
        lines.append("%s,%s,%s,%s" % (repr(float(t)), repr(float(s)),
                                      repr(float(e)), repr(float(rel))))
    return "\n".join(lines) + "\n"
